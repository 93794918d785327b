#pragma once

#include "ssgan/video_clip.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace ssgan::test {

template <typename Scalar = float>
BasicVideoClip<Scalar> random_clip(ClipShape shape, std::uint64_t seed) {
  BasicVideoClip<Scalar> clip(shape);
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (Index i = 0; i < clip.data().size(); ++i) clip.data()[i] = Scalar(dist(rng));
  return clip;
}

/// Sum of (pixel + 1), the "mass" above the background level.
template <typename Scalar>
double mass(const BasicVideoClip<Scalar>& clip) {
  return (clip.data().template cast<double>().array() + 1.0).sum();
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("ssgan-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::permissions(path_, std::filesystem::perms::owner_all,
                                 std::filesystem::perm_options::add, ec);
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace ssgan::test
