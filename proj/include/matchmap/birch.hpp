// Copyright 2026 The Matchmap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Birch CF-tree clustering with an agglomerative final merge.

#ifndef MATCHMAP_BIRCH_HPP_
#define MATCHMAP_BIRCH_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "matchmap/common.hpp"
#include "matchmap/tensor.hpp"

namespace mm {

// Clustering-feature sufficient statistics: count, linear sum, squared sum.
struct CfSubcluster {
  int64_t n = 0;
  std::vector<double> ls;
  double ss = 0;

  std::vector<double> centroid() const {
    std::vector<double> c(ls.size());
    for (size_t d = 0; d < ls.size(); ++d) c[d] = ls[d] / double(n);
    return c;
  }
  double radius2() const {
    double c2 = 0;
    for (double v : ls) c2 += (v / double(n)) * (v / double(n));
    return ss / double(n) - c2;
  }
};

namespace detail {

inline double sq_dist(const std::vector<double>& a,
                      const std::vector<double>& b) {
  double s = 0;
  for (size_t d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

struct CfNode;

// One slot of a node: CF totals plus an optional subtree.
struct CfEntry {
  CfSubcluster cf;
  std::unique_ptr<CfNode> child;
};

struct CfNode {
  bool is_leaf = true;
  std::vector<CfEntry> entries;
};

inline void cf_add_point(CfSubcluster& cf, const double* x, int64_t dim) {
  if (cf.ls.empty()) cf.ls.assign(static_cast<size_t>(dim), 0.0);
  cf.n += 1;
  for (int64_t d = 0; d < dim; ++d) {
    cf.ls[static_cast<size_t>(d)] += x[d];
    cf.ss += x[d] * x[d];
  }
}

inline size_t nearest_entry(const CfNode& node, const double* x, int64_t dim) {
  size_t best = 0;
  double best_d = -1;
  for (size_t i = 0; i < node.entries.size(); ++i) {
    const std::vector<double> c = node.entries[i].cf.centroid();
    double d = 0;
    for (int64_t k = 0; k < dim; ++k) {
      const double diff = c[static_cast<size_t>(k)] - x[k];
      d += diff * diff;
    }
    if (best_d < 0 || d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

// Splits an overflowing node: the farthest centroid pair seeds two nodes and
// every entry joins the nearer seed (ties to the first seed).
inline std::pair<CfEntry, CfEntry> split_node(std::unique_ptr<CfNode> node) {
  size_t sa = 0, sb = 1;
  double far_d = -1;
  std::vector<std::vector<double>> cents(node->entries.size());
  for (size_t i = 0; i < node->entries.size(); ++i)
    cents[i] = node->entries[i].cf.centroid();
  for (size_t i = 0; i < node->entries.size(); ++i)
    for (size_t j = i + 1; j < node->entries.size(); ++j) {
      const double d = sq_dist(cents[i], cents[j]);
      if (d > far_d) {
        far_d = d;
        sa = i;
        sb = j;
      }
    }
  auto left = std::make_unique<CfNode>();
  auto right = std::make_unique<CfNode>();
  left->is_leaf = right->is_leaf = node->is_leaf;
  CfEntry le, re;
  for (size_t i = 0; i < node->entries.size(); ++i) {
    const double da = sq_dist(cents[i], cents[sa]);
    const double db = sq_dist(cents[i], cents[sb]);
    // Ties go left, but the second seed anchors the right half so neither
    // side ends up empty.
    const bool go_left = i != sb && da <= db;
    CfNode* dst = go_left ? left.get() : right.get();
    CfEntry* sum = go_left ? &le : &re;
    if (sum->cf.ls.empty()) sum->cf.ls.assign(cents[i].size(), 0.0);
    sum->cf.n += node->entries[i].cf.n;
    for (size_t d = 0; d < cents[i].size(); ++d)
      sum->cf.ls[d] += node->entries[i].cf.ls[d];
    sum->cf.ss += node->entries[i].cf.ss;
    dst->entries.push_back(std::move(node->entries[i]));
  }
  le.child = std::move(left);
  re.child = std::move(right);
  return {std::move(le), std::move(re)};
}

// Inserts x below `entry`; returns a sibling entry when the child split.
inline bool insert_point(CfEntry& entry, const double* x, int64_t dim,
                         double threshold, int64_t branching,
                         CfEntry* sibling) {
  CfNode& node = *entry.child;
  if (node.is_leaf) {
    bool placed = false;
    if (!node.entries.empty()) {
      const size_t near = nearest_entry(node, x, dim);
      CfSubcluster merged = node.entries[near].cf;
      cf_add_point(merged, x, dim);
      if (std::sqrt(std::max(0.0, merged.radius2())) <= threshold) {
        node.entries[near].cf = std::move(merged);
        placed = true;
      }
    }
    if (!placed) {
      CfEntry fresh;
      cf_add_point(fresh.cf, x, dim);
      node.entries.push_back(std::move(fresh));
    }
  } else {
    const size_t near = nearest_entry(node, x, dim);
    CfEntry extra;
    if (insert_point(node.entries[near], x, dim, threshold, branching,
                     &extra))
      node.entries.push_back(std::move(extra));
  }
  cf_add_point(entry.cf, x, dim);
  if (int64_t(node.entries.size()) > branching) {
    // split_node recomputes both halves' CFs from their entries, which
    // already include x.
    auto [le, re] = split_node(std::move(entry.child));
    entry.child = std::move(le.child);
    entry.cf = std::move(le.cf);
    *sibling = std::move(re);
    return true;
  }
  return false;
}

inline void collect_leaves(const CfNode& node, std::vector<CfSubcluster>* out) {
  if (node.is_leaf) {
    for (const CfEntry& e : node.entries) out->push_back(e.cf);
    return;
  }
  for (const CfEntry& e : node.entries) collect_leaves(*e.child, out);
}

inline std::vector<CfSubcluster> birch_fit_once(const Tensor<double>& pts,
                                                double threshold,
                                                int64_t branching) {
  const int64_t n = pts.extent(0), dim = pts.extent(1);
  CfEntry root;
  root.child = std::make_unique<CfNode>();
  for (int64_t i = 0; i < n; ++i) {
    CfEntry sibling;
    if (insert_point(root, pts.data() + i * dim, dim, threshold, branching,
                     &sibling)) {
      // Root split: root.cf now covers the left half only. Rebuild a new
      // root one level up holding both halves.
      auto top = std::make_unique<CfNode>();
      top->is_leaf = false;
      CfEntry left_half;
      left_half.cf = root.cf;
      left_half.child = std::move(root.child);
      CfSubcluster total = left_half.cf;
      total.n += sibling.cf.n;
      for (size_t d = 0; d < total.ls.size(); ++d)
        total.ls[d] += sibling.cf.ls[d];
      total.ss += sibling.cf.ss;
      top->entries.push_back(std::move(left_half));
      top->entries.push_back(std::move(sibling));
      root.child = std::move(top);
      root.cf = total;
    }
  }
  std::vector<CfSubcluster> out;
  collect_leaves(*root.child, &out);
  return out;
}

}  // namespace detail

// Single-pass CF-tree build. When the leaf count exceeds max_leaves the
// threshold grows by half and the tree is rebuilt.
inline std::vector<CfSubcluster> birch_fit(const Tensor<double>& pts,
                                           double threshold, int64_t branching,
                                           int64_t max_leaves) {
  check(pts.rank() == 2, "birch: points must be (N, D), got ",
        shape_str(pts.shape()));
  check(pts.extent(0) >= 1, "birch: no vectors");
  check(threshold > 0, "birch: threshold must be > 0");
  check(branching >= 2, "birch: branching must be >= 2");
  check(max_leaves >= 1, "birch: leaf target must be >= 1");
  double t = threshold;
  for (;;) {
    std::vector<CfSubcluster> subs = detail::birch_fit_once(pts, t, branching);
    if (int64_t(subs.size()) <= max_leaves) return subs;
    t *= 1.5;
  }
}

// Nearest-centroid assignment of points to subclusters, ties to the lower
// index.
inline std::vector<int64_t> birch_assign(
    const Tensor<double>& pts, const std::vector<CfSubcluster>& subs) {
  check(pts.rank() == 2, "birch_assign: points must be (N, D)");
  check(!subs.empty(), "birch_assign: no subclusters");
  const int64_t n = pts.extent(0), dim = pts.extent(1);
  std::vector<std::vector<double>> cents(subs.size());
  for (size_t i = 0; i < subs.size(); ++i) {
    cents[i] = subs[i].centroid();
    check(int64_t(cents[i].size()) == dim,
          "birch_assign: dimension mismatch");
  }
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double* x = pts.data() + i * dim;
    int64_t best = 0;
    double best_d = -1;
    for (size_t s = 0; s < cents.size(); ++s) {
      double d = 0;
      for (int64_t k = 0; k < dim; ++k) {
        const double diff = cents[s][static_cast<size_t>(k)] - x[k];
        d += diff * diff;
      }
      if (best_d < 0 || d < best_d) {
        best_d = d;
        best = int64_t(s);
      }
    }
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

// A group of subclusters with pooled CF statistics.
struct MergedCluster {
  std::vector<int64_t> subclusters;
  CfSubcluster cf;
};

// Repeatedly merges the pair of clusters with minimal distance between
// count-weighted centroids until target_k remain; ties pick the lowest
// (i, j) pair.
inline std::vector<MergedCluster> agglomerative_merge(
    const std::vector<CfSubcluster>& subs, int64_t target_k) {
  check(target_k >= 1, "agglomerative_merge: target must be >= 1");
  check(target_k <= int64_t(subs.size()),
        "agglomerative_merge: target ", target_k, " exceeds ", subs.size(),
        " subclusters");
  std::vector<MergedCluster> clusters(subs.size());
  for (size_t i = 0; i < subs.size(); ++i) {
    clusters[i].subclusters = {int64_t(i)};
    clusters[i].cf = subs[i];
  }
  while (int64_t(clusters.size()) > target_k) {
    size_t bi = 0, bj = 1;
    double best = -1;
    for (size_t i = 0; i < clusters.size(); ++i) {
      const std::vector<double> ci = clusters[i].cf.centroid();
      for (size_t j = i + 1; j < clusters.size(); ++j) {
        const double d = detail::sq_dist(ci, clusters[j].cf.centroid());
        if (best < 0 || d < best) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    }
    MergedCluster& a = clusters[bi];
    const MergedCluster& b = clusters[bj];
    a.subclusters.insert(a.subclusters.end(), b.subclusters.begin(),
                         b.subclusters.end());
    std::sort(a.subclusters.begin(), a.subclusters.end());
    a.cf.n += b.cf.n;
    for (size_t d = 0; d < a.cf.ls.size(); ++d) a.cf.ls[d] += b.cf.ls[d];
    a.cf.ss += b.cf.ss;
    clusters.erase(clusters.begin() + int64_t(bj));
  }
  return clusters;
}

// Adjusted Rand index between two labelings of the same points.
inline double adjusted_rand_index(const std::vector<int64_t>& a,
                                  const std::vector<int64_t>& b) {
  check(a.size() == b.size() && !a.empty(),
        "adjusted_rand_index: labelings must agree in length");
  auto compress = [](const std::vector<int64_t>& v) {
    std::vector<int64_t> sorted(v);
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<int64_t> out(v.size());
    for (size_t i = 0; i < v.size(); ++i)
      out[i] = std::lower_bound(sorted.begin(), sorted.end(), v[i]) -
               sorted.begin();
    return std::pair<std::vector<int64_t>, int64_t>(out,
                                                    int64_t(sorted.size()));
  };
  const auto [ra, ka] = compress(a);
  const auto [rb, kb] = compress(b);
  std::vector<int64_t> table(static_cast<size_t>(ka * kb), 0);
  std::vector<int64_t> rows(static_cast<size_t>(ka), 0);
  std::vector<int64_t> cols(static_cast<size_t>(kb), 0);
  for (size_t i = 0; i < ra.size(); ++i) {
    table[static_cast<size_t>(ra[i] * kb + rb[i])] += 1;
    rows[static_cast<size_t>(ra[i])] += 1;
    cols[static_cast<size_t>(rb[i])] += 1;
  }
  auto choose2 = [](int64_t n) { return double(n) * double(n - 1) / 2.0; };
  double sum_ij = 0, sum_a = 0, sum_b = 0;
  for (int64_t v : table) sum_ij += choose2(v);
  for (int64_t v : rows) sum_a += choose2(v);
  for (int64_t v : cols) sum_b += choose2(v);
  const double total = choose2(int64_t(a.size()));
  const double expected = sum_a * sum_b / total;
  const double maximum = 0.5 * (sum_a + sum_b);
  if (maximum == expected) return 1.0;
  return (sum_ij - expected) / (maximum - expected);
}

}  // namespace mm

#endif  // MATCHMAP_BIRCH_HPP_
