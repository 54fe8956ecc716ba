#pragma once

#include <numeric>
#include <vector>

namespace pdm {

// Disjoint sets with path halving and union by size.
class DisjointSets {
 public:
  explicit DisjointSets(long count) : parent_(static_cast<std::size_t>(count)),
                                      size_(static_cast<std::size_t>(count), 1),
                                      components_(count) {
    std::iota(parent_.begin(), parent_.end(), 0L);
  }

  long find(long x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  bool unite(long a, long b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    --components_;
    return true;
  }

  bool same(long a, long b) { return find(a) == find(b); }
  long components() const noexcept { return components_; }

 private:
  std::vector<long> parent_;
  std::vector<long> size_;
  long components_;
};

}  // namespace pdm
