// Copyright 2026 The IPO Workbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef IPO_GRIDWORLD_H_
#define IPO_GRIDWORLD_H_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ipo::grid {

// Integer codes follow MiniGrid so serialized observations are portable.
enum class CellType : uint8_t {
  kUnseen = 0,
  kEmpty = 1,
  kWall = 2,
  kDoor = 4,
  kKey = 5,
  kGoal = 8,
};

enum class Color : uint8_t {
  kRed = 0,
  kGreen = 1,
  kBlue = 2,
  kPurple = 3,
  kYellow = 4,
  kGrey = 5,
};

inline constexpr int kNumColors = 6;

enum class DoorState : uint8_t { kOpen = 0, kClosed = 1, kLocked = 2 };

enum class Action : uint8_t {
  kTurnLeft = 0,
  kTurnRight = 1,
  kForward = 2,
  kPickup = 3,
  kDrop = 4,
  kToggle = 5,
  kDone = 6,
};

inline constexpr int kNumActions = 7;

// Headings: 0 = +x (east), 1 = +y (south), 2 = -x (west), 3 = -y (north).
inline constexpr std::array<std::array<int, 2>, 4> kDirToVec = {
    {{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};

std::string_view ColorName(Color c);
// Accepts "red", "green", ..., or a decimal code.
std::optional<Color> ParseColor(std::string_view name);
bool IsValidTypeCode(int code);

struct Cell {
  CellType type = CellType::kEmpty;
  Color color = Color::kRed;
  uint8_t state = 0;

  bool operator==(const Cell&) const = default;

  static Cell Empty() { return {}; }
  static Cell Wall() { return {CellType::kWall, Color::kGrey, 0}; }
  static Cell Goal() { return {CellType::kGoal, Color::kGreen, 0}; }
  static Cell Key(Color c) { return {CellType::kKey, c, 0}; }
  static Cell Door(Color c, DoorState s) {
    return {CellType::kDoor, c, static_cast<uint8_t>(s)};
  }

  bool CanOverlap() const;
  bool SeeBehind() const;
};

inline constexpr int kViewSize = 5;
inline constexpr int kObsChannels = 3;

// Egocentric kViewSize x kViewSize x 3 codes (type, color, state). The agent
// sits at (x, y) = (kViewSize / 2, kViewSize - 1) facing -y.
struct Observation {
  std::array<uint8_t, kViewSize * kViewSize * kObsChannels> codes{};

  uint8_t at(int x, int y, int channel) const {
    return codes[(y * kViewSize + x) * kObsChannels + channel];
  }
  uint8_t& at(int x, int y, int channel) {
    return codes[(y * kViewSize + x) * kObsChannels + channel];
  }
  bool operator==(const Observation&) const = default;
};

struct GridEnv {
  int width = 5;
  int height = 5;
  std::vector<Cell> cells;  // row-major, index y * width + x
  std::array<int, 2> agent_pos{};
  int agent_dir = 0;
  std::optional<Cell> carrying;
  int t = 0;
  int max_steps = 250;
  Color domain_color = Color::kRed;
  uint64_t layout_seed = 0;
  bool done = false;

  const Cell& at(int x, int y) const { return cells[y * width + x]; }
  Cell& at(int x, int y) { return cells[y * width + x]; }
  bool InBounds(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height;
  }
  std::array<int, 2> FrontPos() const {
    return {agent_pos[0] + kDirToVec[agent_dir][0],
            agent_pos[1] + kDirToVec[agent_dir][1]};
  }
};

// DoorKey layout: a vertical wall at a seeded interior column with a locked
// door at a seeded row; agent and key on the left, goal in the bottom-right
// interior corner. The layout depends on the seed only; the key and door take
// `color`.
GridEnv GenerateEnv(Color color, uint64_t seed, int size = 5,
                    int max_steps = 250);

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
};

// Throws std::logic_error when the episode has already finished.
StepResult Step(GridEnv& env, Action action);

Observation EncodeObservation(const GridEnv& env);

nlohmann::json ToJson(const GridEnv& env);
GridEnv GridEnvFromJson(const nlohmann::json& j);
nlohmann::json ToJson(const Observation& obs);
std::string ToAscii(const GridEnv& env);

}  // namespace ipo::grid

#endif  // IPO_GRIDWORLD_H_
