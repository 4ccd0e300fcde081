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

#include "ipo/gridworld.h"

#include <algorithm>
#include <charconv>
#include <stdexcept>

#include "ipo/rng.h"

namespace ipo::grid {
namespace {

constexpr std::array<std::string_view, kNumColors> kColorNames = {
    "red", "green", "blue", "purple", "yellow", "grey"};

// Uniform integer in [lo, hi); hi <= lo collapses to lo.
int RandInt(Rng& rng, int lo, int hi) {
  if (hi <= lo) return lo;
  return lo + static_cast<int>(rng.UniformInt(static_cast<uint64_t>(hi - lo)));
}

std::array<int, 2> PlaceInRegion(const GridEnv& env, Rng& rng, int width,
                                 int height,
                                 std::optional<std::array<int, 2>> avoid) {
  for (;;) {
    const int x = RandInt(rng, 0, width);
    const int y = RandInt(rng, 0, height);
    if (env.at(x, y).type != CellType::kEmpty) continue;
    if (avoid && (*avoid)[0] == x && (*avoid)[1] == y) continue;
    return {x, y};
  }
}

// The kViewSize x kViewSize window in front of the agent, rotated so that the
// agent faces -y. Cells outside the grid read as walls.
std::array<Cell, kViewSize * kViewSize> EgocentricView(const GridEnv& env) {
  constexpr int v = kViewSize;
  const int ax = env.agent_pos[0];
  const int ay = env.agent_pos[1];
  int top_x = 0;
  int top_y = 0;
  switch (env.agent_dir) {
    case 0: top_x = ax; top_y = ay - v / 2; break;
    case 1: top_x = ax - v / 2; top_y = ay; break;
    case 2: top_x = ax - v + 1; top_y = ay - v / 2; break;
    default: top_x = ax - v / 2; top_y = ay - v + 1; break;
  }
  std::array<Cell, v * v> view;
  for (int j = 0; j < v; ++j) {
    for (int i = 0; i < v; ++i) {
      const int x = top_x + i;
      const int y = top_y + j;
      view[j * v + i] = env.InBounds(x, y) ? env.at(x, y) : Cell::Wall();
    }
  }
  // Rotate left (agent_dir + 1) times: new(j, v - 1 - i) = old(i, j).
  for (int r = 0; r < env.agent_dir + 1; ++r) {
    std::array<Cell, v * v> rotated;
    for (int j = 0; j < v; ++j) {
      for (int i = 0; i < v; ++i) {
        rotated[(v - 1 - i) * v + j] = view[j * v + i];
      }
    }
    view = rotated;
  }
  return view;
}

// Visibility sweep from the agent's cell, row by row away from the agent;
// light propagates sideways and forward through cells that can be seen
// behind.
std::array<bool, kViewSize * kViewSize> VisibilityMask(
    const std::array<Cell, kViewSize * kViewSize>& view) {
  constexpr int v = kViewSize;
  std::array<bool, v * v> mask{};
  auto m = [&](int i, int j) -> bool& { return mask[j * v + i]; };
  auto opaque = [&](int i, int j) { return !view[j * v + i].SeeBehind(); };
  m(v / 2, v - 1) = true;
  for (int j = v - 1; j >= 0; --j) {
    for (int i = 0; i < v - 1; ++i) {
      if (!m(i, j) || opaque(i, j)) continue;
      m(i + 1, j) = true;
      if (j > 0) {
        m(i + 1, j - 1) = true;
        m(i, j - 1) = true;
      }
    }
    for (int i = v - 1; i >= 1; --i) {
      if (!m(i, j) || opaque(i, j)) continue;
      m(i - 1, j) = true;
      if (j > 0) {
        m(i - 1, j - 1) = true;
        m(i, j - 1) = true;
      }
    }
  }
  return mask;
}

nlohmann::json CellJson(const Cell& c) {
  return {{"type", static_cast<int>(c.type)},
          {"color", static_cast<int>(c.color)},
          {"state", static_cast<int>(c.state)}};
}

Cell CellFromJson(const nlohmann::json& j) {
  Cell c;
  c.type = static_cast<CellType>(j.at("type").get<int>());
  c.color = static_cast<Color>(j.at("color").get<int>());
  c.state = static_cast<uint8_t>(j.at("state").get<int>());
  return c;
}

}  // namespace

std::string_view ColorName(Color c) {
  return kColorNames[static_cast<size_t>(c)];
}

std::optional<Color> ParseColor(std::string_view name) {
  for (size_t i = 0; i < kColorNames.size(); ++i) {
    if (kColorNames[i] == name) return static_cast<Color>(i);
  }
  int code = -1;
  const auto [ptr, ec] =
      std::from_chars(name.data(), name.data() + name.size(), code);
  if (ec == std::errc() && ptr == name.data() + name.size() && code >= 0 &&
      code < kNumColors) {
    return static_cast<Color>(code);
  }
  return std::nullopt;
}

bool IsValidTypeCode(int code) {
  return code == 0 || code == 1 || code == 2 || code == 4 || code == 5 ||
         code == 8;
}

bool Cell::CanOverlap() const {
  switch (type) {
    case CellType::kEmpty:
    case CellType::kGoal:
      return true;
    case CellType::kDoor:
      return state == static_cast<uint8_t>(DoorState::kOpen);
    default:
      return false;
  }
}

bool Cell::SeeBehind() const {
  switch (type) {
    case CellType::kWall:
      return false;
    case CellType::kDoor:
      return state == static_cast<uint8_t>(DoorState::kOpen);
    default:
      return true;
  }
}

GridEnv GenerateEnv(Color color, uint64_t seed, int size, int max_steps) {
  if (size < 5) throw std::invalid_argument("GenerateEnv: size must be >= 5");
  GridEnv env;
  env.width = size;
  env.height = size;
  env.max_steps = max_steps;
  env.domain_color = color;
  env.layout_seed = seed;
  env.cells.assign(static_cast<size_t>(size * size), Cell::Empty());
  for (int i = 0; i < size; ++i) {
    env.at(i, 0) = env.at(i, size - 1) = Cell::Wall();
    env.at(0, i) = env.at(size - 1, i) = Cell::Wall();
  }
  env.at(size - 2, size - 2) = Cell::Goal();

  Rng rng(SplitSeed(seed, "doorkey"));
  const int split = RandInt(rng, 2, size - 2);
  for (int y = 0; y < size; ++y) env.at(split, y) = Cell::Wall();
  env.agent_pos = PlaceInRegion(env, rng, split, size, std::nullopt);
  env.agent_dir = RandInt(rng, 0, 4);
  const int door_row = RandInt(rng, 1, size - 2);
  env.at(split, door_row) = Cell::Door(color, DoorState::kLocked);
  const auto key = PlaceInRegion(env, rng, split, size, env.agent_pos);
  env.at(key[0], key[1]) = Cell::Key(color);
  return env;
}

StepResult Step(GridEnv& env, Action action) {
  if (env.done) throw std::logic_error("Step: episode already finished");
  ++env.t;
  StepResult out;
  const auto [fx, fy] = env.FrontPos();
  Cell* front = env.InBounds(fx, fy) ? &env.at(fx, fy) : nullptr;

  switch (action) {
    case Action::kTurnLeft:
      env.agent_dir = (env.agent_dir + 3) % 4;
      break;
    case Action::kTurnRight:
      env.agent_dir = (env.agent_dir + 1) % 4;
      break;
    case Action::kForward:
      if (front && front->CanOverlap()) {
        env.agent_pos = {fx, fy};
        if (front->type == CellType::kGoal) {
          out.done = true;
          out.reward = 1.0 - 0.9 * static_cast<double>(env.t) /
                                 static_cast<double>(env.max_steps);
        }
      }
      break;
    case Action::kPickup:
      if (front && front->type == CellType::kKey && !env.carrying) {
        env.carrying = *front;
        *front = Cell::Empty();
      }
      break;
    case Action::kDrop:
      if (front && front->type == CellType::kEmpty && env.carrying) {
        *front = *env.carrying;
        env.carrying.reset();
      }
      break;
    case Action::kToggle:
      if (front && front->type == CellType::kDoor) {
        if (front->state == static_cast<uint8_t>(DoorState::kLocked)) {
          if (env.carrying && env.carrying->type == CellType::kKey &&
              env.carrying->color == front->color) {
            front->state = static_cast<uint8_t>(DoorState::kOpen);
          }
        } else {
          front->state = front->state == static_cast<uint8_t>(DoorState::kOpen)
                             ? static_cast<uint8_t>(DoorState::kClosed)
                             : static_cast<uint8_t>(DoorState::kOpen);
        }
      }
      break;
    case Action::kDone:
      break;
    default:
      throw std::invalid_argument("Step: invalid action code");
  }
  if (env.t >= env.max_steps) out.done = true;
  env.done = out.done;
  out.obs = EncodeObservation(env);
  return out;
}

Observation EncodeObservation(const GridEnv& env) {
  constexpr int v = kViewSize;
  std::array<Cell, v * v> view = EgocentricView(env);
  const std::array<bool, v * v> mask = VisibilityMask(view);
  // The agent's own cell reads as empty, carried objects included.
  view[(v - 1) * v + v / 2] = Cell::Empty();
  Observation obs;
  for (int y = 0; y < v; ++y) {
    for (int x = 0; x < v; ++x) {
      if (!mask[y * v + x]) continue;  // unseen stays (0, 0, 0)
      const Cell& c = view[y * v + x];
      obs.at(x, y, 0) = static_cast<uint8_t>(c.type);
      obs.at(x, y, 1) = c.type == CellType::kEmpty
                            ? 0
                            : static_cast<uint8_t>(c.color);
      obs.at(x, y, 2) = c.state;
    }
  }
  return obs;
}

nlohmann::json ToJson(const GridEnv& env) {
  nlohmann::json cells = nlohmann::json::array();
  for (int y = 0; y < env.height; ++y) {
    for (int x = 0; x < env.width; ++x) {
      nlohmann::json c = CellJson(env.at(x, y));
      c["x"] = x;
      c["y"] = y;
      cells.push_back(std::move(c));
    }
  }
  return {{"width", env.width},
          {"height", env.height},
          {"agent", {{"x", env.agent_pos[0]},
                     {"y", env.agent_pos[1]},
                     {"dir", env.agent_dir}}},
          {"carrying",
           env.carrying ? CellJson(*env.carrying) : nlohmann::json(nullptr)},
          {"t", env.t},
          {"max_steps", env.max_steps},
          {"domain_color", static_cast<int>(env.domain_color)},
          {"layout_seed", env.layout_seed},
          {"done", env.done},
          {"cells", std::move(cells)}};
}

GridEnv GridEnvFromJson(const nlohmann::json& j) {
  GridEnv env;
  env.width = j.at("width").get<int>();
  env.height = j.at("height").get<int>();
  env.cells.assign(static_cast<size_t>(env.width * env.height), Cell::Empty());
  for (const auto& c : j.at("cells")) {
    env.at(c.at("x").get<int>(), c.at("y").get<int>()) = CellFromJson(c);
  }
  env.agent_pos = {j.at("agent").at("x").get<int>(),
                   j.at("agent").at("y").get<int>()};
  env.agent_dir = j.at("agent").at("dir").get<int>();
  if (!j.at("carrying").is_null()) env.carrying = CellFromJson(j["carrying"]);
  env.t = j.at("t").get<int>();
  env.max_steps = j.at("max_steps").get<int>();
  env.domain_color = static_cast<Color>(j.at("domain_color").get<int>());
  env.layout_seed = j.at("layout_seed").get<uint64_t>();
  env.done = j.at("done").get<bool>();
  return env;
}

nlohmann::json ToJson(const Observation& obs) {
  // [y][x] = [type, color, state]
  nlohmann::json rows = nlohmann::json::array();
  for (int y = 0; y < kViewSize; ++y) {
    nlohmann::json row = nlohmann::json::array();
    for (int x = 0; x < kViewSize; ++x) {
      row.push_back({obs.at(x, y, 0), obs.at(x, y, 1), obs.at(x, y, 2)});
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ToAscii(const GridEnv& env) {
  static constexpr std::array<char, 4> kArrows = {'>', 'v', '<', '^'};
  std::string out;
  for (int y = 0; y < env.height; ++y) {
    for (int x = 0; x < env.width; ++x) {
      if (env.agent_pos[0] == x && env.agent_pos[1] == y) {
        out += kArrows[env.agent_dir];
        continue;
      }
      const Cell& c = env.at(x, y);
      switch (c.type) {
        case CellType::kWall: out += 'W'; break;
        case CellType::kGoal: out += 'G'; break;
        case CellType::kKey: out += 'K'; break;
        case CellType::kDoor:
          out += c.state == static_cast<uint8_t>(DoorState::kLocked) ? 'L'
                 : c.state == static_cast<uint8_t>(DoorState::kClosed) ? 'D'
                                                                       : '_';
          break;
        default: out += '.'; break;
      }
    }
    out += '\n';
  }
  return out;
}

}  // namespace ipo::grid
