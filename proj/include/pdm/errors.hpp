#pragma once

#include <stdexcept>
#include <string>

namespace pdm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree. `axis()` names the offending dimension ("m", "n", "l", ...).
class DimensionError : public Error {
 public:
  DimensionError(std::string axis, const std::string& what)
      : Error(what + " (axis " + axis + ")"), axis_(std::move(axis)) {}
  const std::string& axis() const noexcept { return axis_; }

 private:
  std::string axis_;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// The admissible stepsize interval [tau, upper] is empty.
class StepsizeIntervalEmpty : public Error {
 public:
  StepsizeIntervalEmpty(double tau, double upper)
      : Error("stepsize interval [" + std::to_string(tau) + ", " + std::to_string(upper) +
              "] is empty; lower tau"),
        tau_(tau),
        upper_(upper) {}
  double tau() const noexcept { return tau_; }
  double upper() const noexcept { return upper_; }

 private:
  double tau_;
  double upper_;
};

/// A distributed round could not proceed (missing neighbour value, prox failure of one agent).
class ProtocolError : public Error {
 public:
  ProtocolError(int agent, const std::string& what)
      : Error("agent " + std::to_string(agent) + ": " + what), agent_(agent) {}
  int agent() const noexcept { return agent_; }

 private:
  int agent_;
};

}  // namespace pdm
