#pragma once

#include "dots/common.hpp"

namespace dots {

// Exponential temperature schedule T(t) = T0 * theta^t, stepped once per
// epoch. theta is derived so T(total_steps) lands on the target temperature.
struct AnnealSchedule {
  double t0 = 1.0;
  double theta = 1.0;
  double t_final = 1.0;
  int total_steps = 0;
  int step = 0;

  static AnnealSchedule exponential(double t0, double t_final, int total_steps);
  // Degenerate constant schedule (theta = 1), for ablation configs only.
  static AnnealSchedule constant(double t, int total_steps);

  double temperature() const;
  double temperature_at(int t) const;
  // Advances one step and returns the new temperature.
  double advance();
};

// Schedule for co-trained operation weights in the topology stage: a copy of
// the combination-weight schedule scaled down 1000x at every step. Only valid
// when the stage actually carries more than one retained operation per edge
// (the group strategies).
AnnealSchedule dual_temperature(const AnnealSchedule& beta_schedule,
                                bool multi_op_topology_stage);

}  // namespace dots
