#pragma once

#include "langtail/matrix.hpp"

#include <string>
#include <vector>

namespace langtail::train {

enum class Branch { local, global };

inline const char* branch_name(Branch b) { return b == Branch::local ? "local" : "global"; }

/// One linear segmentation head per granularity; rows of `mu` are the
/// cluster centroids the head was initialized from.
struct HeadLevel {
  std::size_t k = 0;
  Matrix mu;  // k x C
};

struct ClusterModel {
  Branch branch = Branch::local;
  std::vector<HeadLevel> levels;
};

}  // namespace langtail::train
