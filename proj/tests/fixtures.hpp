#pragma once

// Builders shared by the test binaries.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include <unistd.h>

#include "spbench/dataset.hpp"
#include "spbench/rng.hpp"

namespace fixture {

using spbench::InteractionLog;
using spbench::ItemId;
using spbench::Timestamp;
using spbench::UserId;

// rows are {user, item, timestamp}
inline InteractionLog log_of(std::initializer_list<std::array<long long, 3>> rows) {
  InteractionLog log;
  for (const auto& r : rows)
    log.interactions.push_back({static_cast<UserId>(r[0]), static_cast<ItemId>(r[1]), r[2]});
  return log;
}

// Uniform random log, stable sorted by time. Users and items may repeat.
inline InteractionLog random_log(std::uint64_t seed, std::size_t users, std::size_t items, std::size_t n,
                                 Timestamp begin = 0, Timestamp end = 1000) {
  spbench::Xoshiro256 rng(seed);
  InteractionLog log;
  for (std::size_t k = 0; k < n; ++k) {
    const auto u = static_cast<UserId>(rng.below(users));
    const auto i = static_cast<ItemId>(rng.below(items));
    const auto t = begin + static_cast<Timestamp>(rng.below(static_cast<std::uint64_t>(end - begin)));
    log.interactions.push_back({u, i, t});
  }
  std::stable_sort(log.interactions.begin(), log.interactions.end(),
                   [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  return log;
}

// Every user gets `per_user` distinct items at increasing times.
inline InteractionLog dense_log(std::uint64_t seed, std::size_t users, std::size_t items, std::size_t per_user,
                                Timestamp begin = 0, Timestamp end = 1000) {
  spbench::Xoshiro256 rng(seed);
  InteractionLog log;
  std::vector<ItemId> pool(items);
  for (std::size_t i = 0; i < items; ++i) pool[i] = static_cast<ItemId>(i);
  for (std::size_t u = 0; u < users; ++u) {
    spbench::partial_shuffle(std::span<ItemId>(pool), per_user, rng);
    for (std::size_t k = 0; k < per_user; ++k) {
      const auto t = begin + static_cast<Timestamp>(rng.below(static_cast<std::uint64_t>(end - begin)));
      log.interactions.push_back({static_cast<UserId>(u), pool[k], t});
    }
  }
  std::stable_sort(log.interactions.begin(), log.interactions.end(),
                   [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  return log;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("spbench-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixture
