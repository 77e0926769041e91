#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vlalign/common.hpp"
#include "vlalign/tensor.hpp"

namespace vlalign {

// Named trainable tensors in a stable creation order. Iteration order is the
// creation order, which fixes optimizer-update and serialization order.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t) {
    check(index_.find(name) == index_.end(), "ParamStore: duplicate parameter '" + name + "'");
    t.set_requires_grad(true);
    index_[name] = names_.size();
    names_.push_back(name);
    tensors_.push_back(t);
    return t;
  }

  Tensor add_normal(const std::string& name, std::vector<int> shape, Rng& rng,
                    double stddev = 0.02) {
    Tensor t(std::move(shape));
    for (long i = 0; i < t.size(); ++i) t.raw()[i] = rng.normal(0.0, stddev);
    return add(name, t);
  }

  Tensor add_const(const std::string& name, std::vector<int> shape, double fill) {
    return add(name, Tensor(std::move(shape), fill));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Tensor at(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "ParamStore: unknown parameter '" + name + "'");
    return tensors_[it->second];
  }

  size_t count() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  Tensor tensor(size_t i) const { return tensors_[i]; }

  void zero_grads() {
    for (Tensor& t : tensors_) t.zero_grad();
  }

  long total_size() const {
    long n = 0;
    for (const Tensor& t : tensors_) n += t.size();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace vlalign
