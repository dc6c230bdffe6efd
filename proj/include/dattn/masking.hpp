#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dattn/errors.hpp"

namespace dattn {

constexpr int kIgnoreIndex = -1;

enum class MaskAction : std::uint8_t {
  KEEP_VISIBLE,
  MASK_TOKEN,
  RANDOM_TOKEN,
  KEEP_BUT_PREDICT,
};

/// Everything the model and loss need about one masked row: what to feed in
/// and which positions carry prediction targets.
struct MaskingPlan {
  std::vector<MaskAction> actions;
  std::vector<int> original;      // token ids before replacement
  std::vector<int> input_tokens;  // token ids after replacement
  std::vector<int> targets;       // original id where predicted, else kIgnoreIndex

  int predicted_count() const {
    int count = 0;
    for (MaskAction a : actions) {
      if (a != MaskAction::KEEP_VISIBLE) ++count;
    }
    return count;
  }
};

/// Independently selects each maskable position with probability `rate`,
/// then splits selections 80/10/10 into mask-token / random-token /
/// keep-but-predict. Random replacements draw uniformly from
/// [first_content_id, vocab_size). Non-maskable positions (specials,
/// padding) are never selected.
inline MaskingPlan plan_masking(const std::vector<int>& tokens,
                                const std::vector<bool>& maskable, double rate,
                                int mask_token_id, int first_content_id,
                                int vocab_size, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("masking rate must lie in [0, 1), got " +
                      std::to_string(rate));
  }
  if (tokens.size() != maskable.size()) {
    throw ShapeError("plan_masking: tokens and maskable flags differ in length");
  }
  if (first_content_id >= vocab_size) {
    throw ConfigError(
        "plan_masking: vocabulary has no content tokens for random "
        "replacement");
  }
  MaskingPlan plan;
  plan.actions.assign(tokens.size(), MaskAction::KEEP_VISIBLE);
  plan.original = tokens;
  plan.input_tokens = tokens;
  plan.targets.assign(tokens.size(), kIgnoreIndex);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> random_token(first_content_id,
                                                  vocab_size - 1);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!maskable[i]) continue;
    if (unit(rng) >= rate) continue;
    double split = unit(rng);
    if (split < 0.8) {
      plan.actions[i] = MaskAction::MASK_TOKEN;
      plan.input_tokens[i] = mask_token_id;
    } else if (split < 0.9) {
      plan.actions[i] = MaskAction::RANDOM_TOKEN;
      plan.input_tokens[i] = random_token(rng);
    } else {
      plan.actions[i] = MaskAction::KEEP_BUT_PREDICT;
    }
    plan.targets[i] = tokens[i];
  }
  return plan;
}

}  // namespace dattn
