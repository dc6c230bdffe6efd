#pragma once

#include <utility>
#include <vector>

#include "dattn/layout.hpp"
#include "dattn/masking.hpp"

namespace dattn {

enum class DataType { mono, bilingual };

inline std::string to_string(DataType d) {
  return d == DataType::mono ? "mono" : "bilingual";
}

/// One homogeneous training batch: masked token rows plus their layouts,
/// masking plans, and (for bilingual rows) gold alignments in row
/// coordinates.
struct Batch {
  DataType data_type = DataType::mono;
  std::vector<std::vector<int>> rows;  // model inputs (after masking)
  std::vector<SegmentLayout> layouts;
  std::vector<MaskingPlan> plans;
  std::vector<std::vector<std::pair<int, int>>> gold;  // bilingual only
  bool truncated = false;

  int size() const { return static_cast<int>(rows.size()); }
};

}  // namespace dattn
