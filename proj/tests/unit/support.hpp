#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "causalmon/dataset.hpp"
#include "causalmon/synth.hpp"

namespace causalmon::testing {

/// Canonical fixture: toy process, seed 42, T = 2000.
inline const TimeSeriesDataset& toy_data() {
    static const TimeSeriesDataset ds = generate_var(toy_spec(42), 2000);
    return ds;
}

/// Removes itself on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("causalmon_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline TimeSeriesDataset make_dataset(Eigen::MatrixXd values, std::vector<std::string> names = {}) {
    TimeSeriesDataset ds;
    if (names.empty()) {
        for (Index c = 0; c < values.cols(); ++c) names.push_back("v" + std::to_string(c));
    }
    ds.values = std::move(values);
    ds.names = std::move(names);
    return ds;
}

}  // namespace causalmon::testing
