#include "symrl/symmetry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace symrl {

namespace {

constexpr std::array<std::string_view, kNumActions> kActionNames = {
    "east", "north", "west", "south", "take_off", "land", "charge"};

}  // namespace

std::string_view action_name(int a) {
  if (a < 0 || a >= kNumActions) throw std::out_of_range("action index out of range");
  return kActionNames[a];
}

int parse_action(std::string_view name) {
  for (int a = 0; a < kNumActions; ++a)
    if (kActionNames[a] == name) return a;
  throw std::invalid_argument("unknown action '" + std::string(name) + "'");
}

Cell direction_delta(int a) {
  switch (a) {
    case kEast: return {0, 1};
    case kNorth: return {-1, 0};
    case kWest: return {0, -1};
    case kSouth: return {1, 0};
    default: throw std::invalid_argument("not a directional action");
  }
}

ActionPermutation action_permutation(GroupElement g) {
  ActionPermutation perm{};
  for (int a = 0; a < kNumActions; ++a)
    perm[a] = is_direction(a) ? (a + g.k()) % kNumDirections : a;
  return perm;
}

int transform_action(GroupElement g, int a) {
  if (a < 0 || a >= kNumActions) throw std::out_of_range("action index out of range");
  return is_direction(a) ? (a + g.k()) % kNumDirections : a;
}

Distribution permute_distribution(GroupElement g, const Distribution& p) {
  Distribution q{};
  for (int a = 0; a < kNumActions; ++a)
    q[is_direction(a) ? (a + g.k()) % kNumDirections : a] = p[a];
  return q;
}

Distribution transform_distribution(GroupElement g, const Distribution& p) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument("distribution has a negative or NaN entry");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("distribution does not sum to one");
  return permute_distribution(g, p);
}

ActionMask transform_mask(GroupElement g, const ActionMask& mask) {
  ActionMask out{};
  for (int a = 0; a < kNumActions; ++a) out[transform_action(g, a)] = mask[a];
  return out;
}

Cell rotate_cell(GroupElement g, Cell cell, int m) {
  for (int i = 0; i < g.k(); ++i) cell = Cell{m - 1 - cell.c, cell.r};
  return cell;
}

}  // namespace symrl
