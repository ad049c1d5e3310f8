#pragma once

#include "sp4d/core.hpp"

#include <string>
#include <vector>

namespace sp4d {

// Motion codes used in label tables.
inline constexpr char kMotionStatic = 'S';
inline constexpr char kMotionDynamic = 'D';
inline constexpr char kMotionGround = 'G';
inline constexpr char kMotionNoise = 'N';

inline bool is_motion_code(char c) {
  return c == kMotionStatic || c == kMotionDynamic || c == kMotionGround || c == kMotionNoise;
}

// One row per point of a frame: superpoint id, instance id and motion code.
struct LabelTable {
  std::vector<int> superpoint;
  std::vector<int> instance;
  std::vector<char> motion;

  std::size_t size() const { return instance.size(); }
  void resize(std::size_t n) {
    superpoint.resize(n);
    instance.resize(n);
    motion.resize(n);
  }
  void set(std::size_t i, int sp, int inst, char m) {
    superpoint[i] = sp;
    instance[i] = inst;
    motion[i] = m;
  }
  bool operator==(const LabelTable&) const = default;
};

}  // namespace sp4d
