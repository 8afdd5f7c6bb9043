#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "bst/errors.hpp"
#include "bst/random.hpp"

namespace bst {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Init { xavier, zeros, ones, small_uniform };

/// Named parameter arrays with matching gradient buffers. Iteration order
/// is the lexicographic order of names, which is the canonical order used
/// by checkpoints and the optimizer.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    Matrix<T> value;
    Matrix<T> grad;
  };

  Matrix<T>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                 Init init, std::uint64_t seed) {
    if (entries_.count(name)) throw ValidationError("duplicate parameter: " + name);
    Entry entry;
    entry.value = Matrix<T>::Zero(rows, cols);
    entry.grad = Matrix<T>::Zero(rows, cols);
    Rng rng(mix_seed(seed, fnv1a(name)));
    switch (init) {
      case Init::xavier: {
        const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
        for (Eigen::Index i = 0; i < entry.value.size(); ++i)
          entry.value.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
        break;
      }
      case Init::small_uniform:
        for (Eigen::Index i = 0; i < entry.value.size(); ++i)
          entry.value.data()[i] = static_cast<T>(rng.uniform(-0.02, 0.02));
        break;
      case Init::ones:
        entry.value.setOnes();
        break;
      case Init::zeros:
        break;
    }
    return entries_.emplace(name, std::move(entry)).first->second.value;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second;
  }

  Matrix<T>& value(const std::string& name) { return at(name).value; }
  const Matrix<T>& value(const std::string& name) const { return at(name).value; }

  void zero_grad() {
    for (auto& [name, entry] : entries_) entry.grad.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, entry] : entries_) n += static_cast<std::size_t>(entry.value.size());
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, entry] : entries_) out.push_back(name);
    return out;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace bst
