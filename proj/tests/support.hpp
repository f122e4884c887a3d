#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>

#include "qorseek/design_space.hpp"

namespace qorseek::testing {

inline std::shared_ptr<const KernelDescriptor> demo_kernel(const std::string& name) {
  return std::make_shared<const KernelDescriptor>(
      load_kernel_file(std::filesystem::path(QORSEEK_DEMO_DIR) / (name + ".kd")));
}

inline std::shared_ptr<const KernelDescriptor> kernel_from(std::string_view text) {
  return std::make_shared<const KernelDescriptor>(parse_kernel_descriptor(text));
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("qorseek-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace qorseek::testing
