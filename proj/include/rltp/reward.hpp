#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "rltp/config.hpp"

namespace rltp {

// The four raw reward components for one window transition, before fusion.
struct RewardBreakdown {
  double r1 = 0.0;  // completion incentive (active while not over-delivered)
  double r2 = 0.0;  // over-delivery penalty (active once past target + tolerance)
  double r3 = 0.0;  // pacing smoothness bonus
  double r4 = 0.0;  // traffic-value (running CTR vs the baseline)

  friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

inline double completion_reward(std::int64_t n_cum, std::int64_t n_target,
                                std::int64_t epsilon) {
  if (n_cum > n_target + epsilon) return 0.0;
  return std::exp(static_cast<double>(n_cum) / static_cast<double>(n_target));
}

inline double overdelivery_penalty(std::int64_t n_cum, std::int64_t n_target,
                                   std::int64_t epsilon) {
  if (n_cum <= n_target + epsilon) return 0.0;
  return 1.0 - std::exp(2.0 * static_cast<double>(n_cum) /
                        static_cast<double>(n_target));
}

// Bonus when the relative step of the cumulative count stays below c. With an
// empty history the bonus holds only if nothing landed yet; the first landing
// is necessarily a jump.
inline double smoothness_reward(std::int64_t n_cum, std::int64_t n_prev_cum,
                                double c) {
  if (n_prev_cum == 0) return n_cum == 0 ? 1.0 : 0.0;
  const double step = std::fabs(static_cast<double>(n_cum - n_prev_cum) /
                                static_cast<double>(n_prev_cum));
  return step < c ? 1.0 : 0.0;
}

inline double traffic_value_reward_at(double ctr, double ctr_base) {
  return std::exp(100.0 * (ctr - ctr_base));
}

inline double traffic_value_reward(std::int64_t clicks_cum, std::int64_t n_cum,
                                   double ctr_base) {
  if (n_cum == 0) return 0.0;
  const double ctr = static_cast<double>(clicks_cum) / static_cast<double>(n_cum);
  return traffic_value_reward_at(ctr, ctr_base);
}

// Running CTR with a prior of `strength` pseudo-impressions at the baseline
// rate. With only a handful of landed impressions the raw ratio swings
// between 0 and ~0.5, and the exponential in the traffic-value term turns
// those swings into astronomically large rewards that drown every other
// signal; the stabilized ratio converges to the raw one once real counts
// dominate the prior.
inline double stabilized_ctr(std::int64_t clicks_cum, std::int64_t n_cum,
                             double ctr_base, double strength) {
  return (static_cast<double>(clicks_cum) + strength * ctr_base) /
         (static_cast<double>(n_cum) + strength);
}

inline RewardBreakdown reward_breakdown(std::int64_t n_cum, std::int64_t n_prev_cum,
                                        std::int64_t clicks_cum,
                                        std::int64_t n_target, std::int64_t epsilon,
                                        double ctr_base, double smoothness_c,
                                        double ctr_prior_strength = 0.0) {
  RewardBreakdown b;
  b.r1 = completion_reward(n_cum, n_target, epsilon);
  b.r2 = overdelivery_penalty(n_cum, n_target, epsilon);
  b.r3 = smoothness_reward(n_cum, n_prev_cum, smoothness_c);
  b.r4 = (ctr_prior_strength > 0.0 && n_cum > 0)
             ? traffic_value_reward_at(
                   stabilized_ctr(clicks_cum, n_cum, ctr_base,
                                  ctr_prior_strength),
                   ctr_base)
             : traffic_value_reward(clicks_cum, n_cum, ctr_base);
  return b;
}

inline RewardBreakdown reward_breakdown(std::int64_t n_cum, std::int64_t n_prev_cum,
                                        std::int64_t clicks_cum,
                                        const ExperimentConfig& c) {
  return reward_breakdown(n_cum, n_prev_cum, clicks_cum, c.n_target, c.epsilon,
                          c.ctr_base, c.smoothness_c, c.ctr_prior_strength);
}

inline double fuse_reward(const RewardBreakdown& b, const double* eta) {
  return eta[0] * b.r1 + eta[1] * b.r2 + eta[2] * b.r3 + eta[3] * b.r4;
}

inline double fuse_reward(const RewardBreakdown& b, const std::array<double, 4>& eta) {
  return fuse_reward(b, eta.data());
}

}  // namespace rltp
