// SPDX-License-Identifier: Apache-2.0
#include "tabflow/grpo.hpp"

#include "tabflow/backend.hpp"
#include "tabflow/error.hpp"
#include "tabflow/orchestrator.hpp"
#include "tabflow/sandbox.hpp"
#include "tabflow/text_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <regex>

namespace tabflow::grpo {

std::size_t GroupRollout::total_tokens() const {
  std::size_t n = 0;
  for (const auto& v : logp_new) n += v.size();
  return n;
}

void GroupRollout::validate() const {
  if (rewards.size() < 2) throw Error(ErrorCode::ShapeMismatch, "group needs G >= 2 responses");
  if (logp_new.size() != rewards.size() || logp_old.size() != rewards.size())
    throw Error(ErrorCode::ShapeMismatch, "log-prob lists must have one entry per response");
  for (std::size_t i = 0; i < rewards.size(); ++i)
    if (logp_new[i].size() != logp_old[i].size())
      throw Error(ErrorCode::ShapeMismatch,
                  "response " + std::to_string(i) + ": new/old log-prob lengths differ");
  if (total_tokens() == 0) throw Error(ErrorCode::ShapeMismatch, "group has no tokens");
}

GroupRollout GroupRollout::from_json(const nlohmann::json& j) {
  GroupRollout r;
  try {
    r.rewards = j.at("rewards").get<std::vector<double>>();
    r.logp_new = j.at("logp_new").get<std::vector<std::vector<double>>>();
    r.logp_old = j.at("logp_old").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("rollout: ") + e.what());
  }
  r.validate();
  return r;
}

std::vector<double> group_advantages(std::span<const double> rewards, const GrpoConfig& cfg) {
  if (rewards.size() < 2) throw Error(ErrorCode::ShapeMismatch, "group needs G >= 2 rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0;
  for (double r : rewards) mean += r;
  mean /= n;
  // Identical rewards carry no signal; avoid dividing rounding residue by epsilon.
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards.front(); }))
    return std::vector<double>(rewards.size(), 0.0);
  double ss = 0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double var = ss / (cfg.sample_std ? n - 1 : n);
  const double denom = std::max(std::sqrt(var), cfg.std_epsilon);
  std::vector<double> adv;
  adv.reserve(rewards.size());
  for (double r : rewards) adv.push_back((r - mean) / denom);
  return adv;
}

std::vector<double> token_ratios(std::span<const double> logp_new, std::span<const double> logp_old) {
  if (logp_new.size() != logp_old.size())
    throw Error(ErrorCode::LengthMismatch, "log-prob sequences differ in length");
  std::vector<double> out(logp_new.size());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = std::exp(logp_new[t] - logp_old[t]);
  return out;
}

double grpo_objective(const GroupRollout& rollout, std::span<const double> advantages,
                      const GrpoConfig& cfg) {
  rollout.validate();
  if (advantages.size() != rollout.group_size())
    throw Error(ErrorCode::ShapeMismatch, "one advantage per response required");
  double sum = 0;
  for (std::size_t i = 0; i < rollout.group_size(); ++i) {
    auto ratios = token_ratios(rollout.logp_new[i], rollout.logp_old[i]);
    const double a = advantages[i];
    for (double r : ratios) {
      const double clipped = std::clamp(r, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
      sum += std::min(r * a, clipped * a);
    }
  }
  return sum / static_cast<double>(rollout.total_tokens());
}

std::vector<std::vector<double>> grpo_objective_gradient(const GroupRollout& rollout,
                                                         std::span<const double> advantages,
                                                         const GrpoConfig& cfg) {
  rollout.validate();
  if (advantages.size() != rollout.group_size())
    throw Error(ErrorCode::ShapeMismatch, "one advantage per response required");
  const double inv_n = 1.0 / static_cast<double>(rollout.total_tokens());
  std::vector<std::vector<double>> grad(rollout.group_size());
  for (std::size_t i = 0; i < rollout.group_size(); ++i) {
    auto ratios = token_ratios(rollout.logp_new[i], rollout.logp_old[i]);
    const double a = advantages[i];
    grad[i].resize(ratios.size());
    for (std::size_t t = 0; t < ratios.size(); ++t) {
      const double r = ratios[t];
      const double clipped = std::clamp(r, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
      // d(r*a)/dlogp = r*a; the clipped branch is constant in logp.
      grad[i][t] = r * a <= clipped * a ? r * a * inv_n : 0.0;
    }
  }
  return grad;
}

bool has_think_format(std::string_view trace) {
  auto s = text::trim(trace);
  constexpr std::string_view open = "<think>", close = "</think>";
  if (s.substr(0, open.size()) != open) return false;
  auto end = s.find(close);
  if (end == std::string_view::npos) return false;
  auto body = s.substr(open.size(), end - open.size());
  if (body.find(open) != std::string_view::npos || text::trim(body).empty()) return false;
  auto rest = s.substr(end + close.size());
  if (rest.find(open) != std::string_view::npos || rest.find(close) != std::string_view::npos)
    return false;
  return !text::trim(rest).empty();
}

namespace {

std::optional<double> parse_unit_score(std::string_view response) {
  static const std::regex score_re(R"([Ss]core\s*[:=]\s*(-?[0-9]+(?:\.[0-9]+)?))");
  std::string s(response);
  std::smatch m;
  if (std::regex_search(s, m, score_re)) return std::stod(m[1].str());
  if (auto v = text::parse_number(text::trim(response))) return *v;
  return std::nullopt;
}

} // namespace

RewardBreakdown compute_reward(std::string_view trace, std::string_view gold, Sandbox& sandbox,
                               ModelBackend& judge, const TableFiles& tables,
                               const RewardConfig& cfg) {
  RewardBreakdown out;
  out.format = has_think_format(trace) ? cfg.f_base : 0.0;

  std::string solution(trace);
  if (auto end = solution.find("</think>"); end != std::string::npos)
    solution = solution.substr(end + 8);
  auto action = parse_model_output(solution, Mode::PoT);
  const auto* code = std::get_if<CodeBlock>(&action.action);
  if (!code) {
    out.reason = "no code block in solution";
  } else {
    ExecRequest req;
    req.code = code->code;
    req.tables = tables;
    auto result = sandbox.execute(req);
    if (result.status != ExecStatus::Ok && result.status != ExecStatus::OutputTruncated) {
      out.reason = "sandbox " + std::string(to_string(result.status)) + ": " + result.stderr_text;
    } else {
      ChatRequest jr;
      jr.messages = {
          {"system", "You are a result evaluator. Compare the program output with the "
                     "ground-truth answer and reply with 'Score: <number between 0 and 1>'."},
          {"user", "Ground truth:\n" + std::string(gold) + "\n\nProgram output:\n" + result.stdout_text}};
      auto score = parse_unit_score(judge.complete(jr));
      if (!score) {
        out.reason = "judge output unparseable";
      } else {
        out.accuracy = std::clamp(*score, 0.0, 1.0);
      }
    }
  }
  out.total = cfg.w_acc * out.accuracy + out.format;
  return out;
}

} // namespace tabflow::grpo
