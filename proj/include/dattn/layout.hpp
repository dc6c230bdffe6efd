#pragma once

#include <string>
#include <vector>

#include "dattn/tape.hpp"

namespace dattn {

/// Describes one input row: where segment X ends and segment Y begins,
/// which language each half is in, where the specials sit, and which
/// positions are real tokens (as opposed to padding).
struct SegmentLayout {
  int n = 0;         // row length including specials and padding
  int boundary = 0;  // first index of segment Y; == n for monolingual rows
  int lang_x = -1;
  int lang_y = -1;
  int bos_pos = -1;
  int sep_pos = -1;
  int eos_pos = -1;
  std::vector<bool> real;  // real[i] == false exactly at padding positions

  bool mono() const { return boundary == n; }
  int segment_of(int i) const { return i < boundary ? 0 : 1; }
  bool is_special(int i) const {
    return i == bos_pos || i == sep_pos || i == eos_pos;
  }
  bool is_content(int i) const {
    return real[static_cast<std::size_t>(i)] && !is_special(i);
  }

  void validate() const {
    if (n < 1) throw LayoutError("layout length must be positive");
    if (boundary < 0 || boundary > n) {
      throw LayoutError("layout boundary " + std::to_string(boundary) +
                        " outside [0, " + std::to_string(n) + "]");
    }
    if (static_cast<int>(real.size()) != n) {
      throw LayoutError("layout real-token vector length " +
                        std::to_string(real.size()) + " != n " +
                        std::to_string(n));
    }
    if (!mono() && boundary == 0) {
      throw LayoutError("bilingual layout with empty first segment");
    }
  }

  int real_count_in_segment(int seg) const {
    int count = 0;
    for (int i = 0; i < n; ++i) {
      if (segment_of(i) == seg && real[static_cast<std::size_t>(i)]) ++count;
    }
    return count;
  }
};

/// Every query may attend to every real token.
inline BoolMat full_attention_mask(const SegmentLayout& lay) {
  lay.validate();
  BoolMat m(lay.n, lay.n);
  for (int r = 0; r < lay.n; ++r) {
    for (int c = 0; c < lay.n; ++c) {
      m(r, c) = lay.real[static_cast<std::size_t>(c)];
    }
  }
  return m;
}

/// Queries attend only to real tokens of their own segment.
inline BoolMat intra_segment_mask(const SegmentLayout& lay) {
  lay.validate();
  BoolMat m(lay.n, lay.n);
  for (int r = 0; r < lay.n; ++r) {
    for (int c = 0; c < lay.n; ++c) {
      m(r, c) = lay.real[static_cast<std::size_t>(c)] &&
                lay.segment_of(c) == lay.segment_of(r);
    }
  }
  return m;
}

/// Queries attend only to real tokens of the *other* segment. Requires both
/// segments to hold at least one real token.
inline BoolMat cross_segment_mask(const SegmentLayout& lay) {
  lay.validate();
  if (lay.mono()) {
    throw LayoutError("cross-segment mask is undefined for monolingual rows");
  }
  if (lay.real_count_in_segment(0) == 0 || lay.real_count_in_segment(1) == 0) {
    throw LayoutError("cross-segment mask needs real tokens in both segments");
  }
  BoolMat m(lay.n, lay.n);
  for (int r = 0; r < lay.n; ++r) {
    for (int c = 0; c < lay.n; ++c) {
      m(r, c) = lay.real[static_cast<std::size_t>(c)] &&
                lay.segment_of(c) != lay.segment_of(r);
    }
  }
  return m;
}

}  // namespace dattn
