#pragma once

// Named parameter tensors, their gradients, and their binding onto a tape.

#include "cmoe/autodiff.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <string>

namespace cmoe {

using Gradients = std::map<std::string, Matrix>;

class ParamStore {
 public:
  void add(const std::string& name, Matrix init);
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  const std::map<std::string, Matrix>& all() const { return params_; }
  std::map<std::string, Matrix>& all() { return params_; }
  size_t num_scalars() const;

  // {"name": {"rows": r, "cols": c, "data": [row-major values]}}
  nlohmann::json to_json() const;
  static ParamStore from_json(const nlohmann::json& j);

  bool operator==(const ParamStore& other) const;

 private:
  std::map<std::string, Matrix> params_;
};

// Lazily lifts parameters onto a tape as gradient-carrying leaves.
class ParamBinding {
 public:
  ParamBinding(ad::Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

  ad::Var operator()(const std::string& name);
  bool has(const std::string& name) const { return store_.contains(name); }
  ad::Tape& tape() { return tape_; }

  // Gradients of the last backward() for every parameter in the store;
  // parameters that were never bound get zeros.
  Gradients gradients() const;

 private:
  ad::Tape& tape_;
  const ParamStore& store_;
  std::map<std::string, ad::Var> bound_;
};

double dot(const Gradients& a, const Gradients& b);
double squared_norm(const Gradients& a);
Gradients add(const Gradients& a, const Gradients& b);
bool all_finite(const Gradients& g);

}  // namespace cmoe
