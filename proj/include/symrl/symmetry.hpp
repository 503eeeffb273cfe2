#pragma once

#include <array>
#include <string_view>

#include "symrl/grid.hpp"

namespace symrl {

inline constexpr int kNumActions = 7;
inline constexpr int kNumDirections = 4;

// Directional actions are listed counterclockwise starting from east, so a
// 90 degree counterclockwise rotation advances a direction by one slot.
enum Action : int {
  kEast = 0,
  kNorth = 1,
  kWest = 2,
  kSouth = 3,
  kTakeOff = 4,
  kLand = 5,
  kCharge = 6,
};

std::string_view action_name(int a);
int parse_action(std::string_view name);

inline bool is_direction(int a) { return a >= 0 && a < kNumDirections; }

// Displacement of a directional action.
Cell direction_delta(int a);

using Distribution = std::array<double, kNumActions>;
using ActionMask = std::array<bool, kNumActions>;
using ActionPermutation = std::array<int, kNumActions>;

/// Element of the cyclic rotation group C4: counterclockwise rotation by
/// 90 * k degrees.
class GroupElement {
 public:
  static constexpr int kOrder = 4;

  constexpr GroupElement() = default;
  constexpr explicit GroupElement(int k) : k_(((k % kOrder) + kOrder) % kOrder) {}

  constexpr int k() const { return k_; }
  constexpr int degrees() const { return 90 * k_; }

  static constexpr GroupElement identity() { return GroupElement(0); }

  friend constexpr bool operator==(GroupElement, GroupElement) = default;

 private:
  int k_ = 0;
};

inline constexpr GroupElement kIdentity{0};
inline constexpr GroupElement kRot90{1};
inline constexpr GroupElement kRot180{2};
inline constexpr GroupElement kRot270{3};

inline constexpr int kGroupOrder = GroupElement::kOrder;

constexpr GroupElement compose(GroupElement a, GroupElement b) {
  return GroupElement(a.k() + b.k());
}

constexpr GroupElement inverse(GroupElement a) { return GroupElement(kGroupOrder - a.k()); }

constexpr std::array<GroupElement, kGroupOrder> group_elements() {
  return {kIdentity, kRot90, kRot180, kRot270};
}

// K_g as a lookup table: perm[a] is the image of action a.
ActionPermutation action_permutation(GroupElement g);

int transform_action(GroupElement g, int a);

// P_g: q(K_g[a]) = p(a). Throws std::invalid_argument on negative entries or
// when p does not sum to one within 1e-9.
Distribution transform_distribution(GroupElement g, const Distribution& p);

// Unchecked permutation used on hot paths; identical arithmetic-free result.
Distribution permute_distribution(GroupElement g, const Distribution& p);

ActionMask transform_mask(GroupElement g, const ActionMask& mask);

// (r, c) -> (m-1-c, r) applied k times.
Cell rotate_cell(GroupElement g, Cell cell, int m);

template <typename T>
SquareGrid<T> rotate_grid(GroupElement g, const SquareGrid<T>& grid) {
  if (g.k() == 0) return grid;
  const int m = grid.side();
  SquareGrid<T> out(m);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) out[rotate_cell(g, Cell{r, c}, m)] = grid(r, c);
  return out;
}

}  // namespace symrl
