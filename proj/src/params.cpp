#include "cmoe/params.hpp"

#include "cmoe/errors.hpp"

namespace cmoe {

void ParamStore::add(const std::string& name, Matrix init) {
  if (!params_.emplace(name, std::move(init)).second) throw std::logic_error("duplicate parameter " + name);
}

Matrix& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

const Matrix& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

size_t ParamStore::num_scalars() const {
  size_t n = 0;
  for (const auto& [_, m] : params_) n += static_cast<size_t>(m.size());
  return n;
}

nlohmann::json ParamStore::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, m] : params_) {
    std::vector<double> data;
    data.reserve(static_cast<size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    j[name] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
  }
  return j;
}

ParamStore ParamStore::from_json(const nlohmann::json& j) {
  ParamStore s;
  for (const auto& [name, t] : j.items()) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto& data = t.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw DataError("parameter " + name + ": shape header does not match data length");
    }
    Matrix m(rows, cols);
    size_t i = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[i++].get<double>();
    s.add(name, std::move(m));
  }
  return s;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (const auto& [name, m] : params_) {
    auto it = other.params_.find(name);
    if (it == other.params_.end()) return false;
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) return false;
    if (!(it->second.array() == m.array()).all()) return false;
  }
  return true;
}

ad::Var ParamBinding::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  ad::Var v = tape_.variable(store_.at(name));
  bound_.emplace(name, v);
  return v;
}

Gradients ParamBinding::gradients() const {
  Gradients g;
  for (const auto& [name, m] : store_.all()) {
    auto it = bound_.find(name);
    g[name] = it == bound_.end() ? Matrix::Zero(m.rows(), m.cols()) : tape_.grad(it->second);
  }
  return g;
}

double dot(const Gradients& a, const Gradients& b) {
  double s = 0.0;
  for (const auto& [name, m] : a) {
    auto it = b.find(name);
    if (it != b.end()) s += m.cwiseProduct(it->second).sum();
  }
  return s;
}

double squared_norm(const Gradients& a) { return dot(a, a); }

Gradients add(const Gradients& a, const Gradients& b) {
  Gradients out = a;
  for (const auto& [name, m] : b) {
    auto it = out.find(name);
    if (it == out.end()) out.emplace(name, m);
    else it->second += m;
  }
  return out;
}

bool all_finite(const Gradients& g) {
  for (const auto& [_, m] : g)
    if (!m.allFinite()) return false;
  return true;
}

}  // namespace cmoe
