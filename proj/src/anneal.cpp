#include "dots/anneal.hpp"

#include <cmath>

namespace dots {

AnnealSchedule AnnealSchedule::exponential(double t0, double t_final, int total_steps) {
  check(t0 > 0.0 && t_final > 0.0, "AnnealSchedule: temperatures must be positive");
  check(t_final <= t0, "AnnealSchedule: target temperature above the initial one");
  check(total_steps > 0, "AnnealSchedule: total_steps must be positive");
  AnnealSchedule s;
  s.t0 = t0;
  s.t_final = t_final;
  s.total_steps = total_steps;
  s.theta = std::exp(std::log(t_final / t0) / total_steps);
  return s;
}

AnnealSchedule AnnealSchedule::constant(double t, int total_steps) {
  check(t > 0.0, "AnnealSchedule: temperature must be positive");
  AnnealSchedule s;
  s.t0 = t;
  s.t_final = t;
  s.total_steps = total_steps;
  s.theta = 1.0;
  return s;
}

double AnnealSchedule::temperature() const { return temperature_at(step); }

double AnnealSchedule::temperature_at(int t) const {
  check(t >= 0, "AnnealSchedule: negative step");
  return t0 * std::pow(theta, t);
}

double AnnealSchedule::advance() {
  ++step;
  return temperature();
}

AnnealSchedule dual_temperature(const AnnealSchedule& beta_schedule,
                                bool multi_op_topology_stage) {
  check(multi_op_topology_stage,
        "dual_temperature: only defined for topology search with more than one "
        "retained operation per edge");
  AnnealSchedule s = beta_schedule;
  s.t0 = beta_schedule.t0 / 1000.0;
  s.t_final = beta_schedule.t_final / 1000.0;
  return s;
}

}  // namespace dots
