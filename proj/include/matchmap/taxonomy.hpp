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

// Rooted label taxonomy with Wu-Palmer similarity.

#ifndef MATCHMAP_TAXONOMY_HPP_
#define MATCHMAP_TAXONOMY_HPP_

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "matchmap/common.hpp"

namespace mm {

// Single-rooted tree of labels; depth(root) = 1.
struct Taxonomy {
  std::string root;
  std::map<std::string, std::string> parent;  // child to parent, root absent
  std::map<std::string, int64_t> depth;

  bool contains(const std::string& label) const {
    return depth.count(label) != 0;
  }
  int64_t depth_of(const std::string& label) const {
    auto it = depth.find(label);
    check(it != depth.end(), "taxonomy: unknown label '", label, "'");
    return it->second;
  }
};

// Builds and validates a taxonomy from parent-child edges: one root, no
// cycles, no node with two parents, everything reachable from the root.
inline Taxonomy make_taxonomy(
    const std::vector<std::pair<std::string, std::string>>& edges) {
  check(!edges.empty(), "taxonomy: no edges");
  Taxonomy t;
  std::set<std::string> nodes, children;
  for (const auto& [parent, child] : edges) {
    check(!parent.empty() && !child.empty(), "taxonomy: empty label");
    check(parent != child, "taxonomy: self edge at '", parent, "'");
    check(t.parent.emplace(child, parent).second,
          "taxonomy: '", child, "' has two parents");
    nodes.insert(parent);
    nodes.insert(child);
    children.insert(child);
  }
  for (const std::string& n : nodes)
    if (!children.count(n)) {
      check(t.root.empty(), "taxonomy: multiple roots ('", t.root, "', '", n,
            "')");
      t.root = n;
    }
  check(!t.root.empty(), "taxonomy: no root (cycle)");
  // Depths by walking each node up to the root. A cycle disjoint from the
  // root survives the checks above, so the walk length is bounded by the
  // node count to catch it.
  for (const std::string& n : nodes) {
    int64_t d = 1;
    std::string cur = n;
    while (cur != t.root) {
      auto it = t.parent.find(cur);
      check(it != t.parent.end(), "taxonomy: '", n,
            "' is not reachable from the root");
      check(d <= int64_t(nodes.size()), "taxonomy: cycle through '", n, "'");
      cur = it->second;
      ++d;
    }
    t.depth[n] = d;
  }
  return t;
}

// Reads "parent<TAB>child" lines; blank lines are skipped.
inline Taxonomy load_taxonomy(const std::string& path) {
  std::ifstream is(path);
  check(bool(is), "taxonomy: cannot open ", path);
  std::vector<std::pair<std::string, std::string>> edges;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    check(tab != std::string::npos && tab > 0 && tab + 1 < line.size(),
          "taxonomy: ", path, ":", lineno, ": expected parent<TAB>child");
    edges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return make_taxonomy(edges);
}

// 2 * depth(lcs) / (depth(a) + depth(b)).
inline double wu_palmer(const Taxonomy& t, const std::string& a,
                        const std::string& b) {
  const int64_t da = t.depth_of(a);
  const int64_t db = t.depth_of(b);
  std::map<std::string, int64_t> up;
  {
    std::string cur = a;
    int64_t d = da;
    for (;;) {
      up[cur] = d;
      if (cur == t.root) break;
      cur = t.parent.at(cur);
      --d;
    }
  }
  std::string cur = b;
  while (!up.count(cur)) cur = t.parent.at(cur);
  return 2.0 * double(up.at(cur)) / double(da + db);
}

}  // namespace mm

#endif  // MATCHMAP_TAXONOMY_HPP_
