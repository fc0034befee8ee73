// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tabflow/sandbox.hpp"

#include <json.hpp>

#include <span>
#include <string>
#include <vector>

namespace tabflow {

class ModelBackend;

namespace grpo {

/// G sampled responses with per-token log-probabilities under the current
/// and the sampling policy. `logp_new[i].size()` is |o_i|.
struct GroupRollout {
  std::vector<double> rewards;
  std::vector<std::vector<double>> logp_new;
  std::vector<std::vector<double>> logp_old;

  std::size_t group_size() const { return rewards.size(); }
  std::size_t total_tokens() const;
  void validate() const;

  static GroupRollout from_json(const nlohmann::json& j);
};

struct GrpoConfig {
  double eps_low = 0.2;
  double eps_high = 0.2;
  double std_epsilon = 1e-8;
  /// Sample (n-1) instead of population standard deviation.
  bool sample_std = false;
};

/// (R_i - mean) / max(std, eps), one value per response; every token of
/// response i shares it.
std::vector<double> group_advantages(std::span<const double> rewards, const GrpoConfig& cfg = {});

std::vector<double> token_ratios(std::span<const double> logp_new, std::span<const double> logp_old);

/// Token-level clipped surrogate averaged over all tokens of the group; no
/// KL penalty term.
double grpo_objective(const GroupRollout& rollout, std::span<const double> advantages,
                      const GrpoConfig& cfg = {});

/// dJ / d logp_new[i][t]. Tokens on the clipped branch contribute zero.
std::vector<std::vector<double>> grpo_objective_gradient(const GroupRollout& rollout,
                                                         std::span<const double> advantages,
                                                         const GrpoConfig& cfg = {});

struct RewardConfig {
  double w_acc = 0.9;
  double f_base = 0.1;
};

struct RewardBreakdown {
  double accuracy = 0;
  double format = 0;
  double total = 0;
  std::string reason;
};

/// True when the text opens with exactly one well-formed <think>...</think>
/// block followed by a non-empty solution.
bool has_think_format(std::string_view trace);

/// Format term from the <think> block; accuracy from a judge scoring the
/// sandbox output of the solution's code block against the gold answer.
RewardBreakdown compute_reward(std::string_view trace, std::string_view gold, Sandbox& sandbox,
                               ModelBackend& judge,
                               const TableFiles& tables = {},
                               const RewardConfig& cfg = {});

} // namespace grpo
} // namespace tabflow
