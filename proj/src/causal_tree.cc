#include <algorithm>
#include <cmath>

#include "prescribe/orf.h"

namespace prescribe::orf {
namespace {

struct Moments {
  double n = 0, st = 0, sy = 0, stt = 0, sty = 0;
  int treated = 0;

  void add(const SplitContext& ctx, std::uint32_t row) {
    const double dt = ctx.t_res(row);
    const double dy = ctx.y_res(row);
    n += 1;
    st += dt;
    sy += dy;
    stt += dt * dt;
    sty += dt * dy;
    treated += ctx.t(row) > 0.5 ? 1 : 0;
  }
  Moments minus(const Moments& o) const {
    return {n - o.n, st - o.st, sy - o.sy, stt - o.stt, sty - o.sty, treated - o.treated};
  }
  std::optional<double> slope() const {
    if (n < 2) return std::nullopt;
    const double den = stt - st * st / n;
    if (!(den > 1e-12 * n)) return std::nullopt;
    return (sty - st * sy / n) / den;
  }
};

bool admissible(double n, int treated, int min_leaf) {
  return n >= min_leaf && treated >= 1 && n - treated >= 1;
}

int count_treated(const SplitContext& ctx, std::span<const std::uint32_t> rows) {
  int c = 0;
  for (auto r : rows) c += ctx.t(r) > 0.5 ? 1 : 0;
  return c;
}

}  // namespace

int CausalTree::leaf_of(const RowRef& x) const {
  int node = 0;
  while (nodes[node].feature >= 0) {
    const TreeNode& nd = nodes[node];
    node = x(nd.feature) <= nd.threshold ? nd.left : nd.right;
  }
  return nodes[node].leaf;
}

int CausalTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].feature < 0) continue;
    d[nodes[i].left] = d[i] + 1;
    d[nodes[i].right] = d[i] + 1;
    best = std::max(best, d[i] + 1);
  }
  return best;
}

std::vector<double> candidate_thresholds(std::vector<double> values, int max_bins) {
  std::sort(values.begin(), values.end());
  std::vector<double> out;
  const std::size_t n = values.size();
  if (n < 2 || values.front() == values.back()) return out;

  std::vector<double> distinct;
  for (double v : values)
    if (distinct.empty() || v != distinct.back()) distinct.push_back(v);

  if (distinct.size() - 1 <= static_cast<std::size_t>(max_bins - 1)) {
    for (std::size_t i = 1; i < distinct.size(); ++i)
      out.push_back(0.5 * (distinct[i - 1] + distinct[i]));
    return out;
  }
  for (int b = 1; b < max_bins; ++b) {
    const std::size_t idx = static_cast<std::size_t>(b) * n / max_bins;
    const double upper = values[idx];
    // Boundary between `upper` and the largest distinct value below it.
    auto it = std::lower_bound(distinct.begin(), distinct.end(), upper);
    if (it == distinct.begin()) continue;
    const double thr = 0.5 * (*(it - 1) + *it);
    if (out.empty() || thr > out.back()) out.push_back(thr);
  }
  return out;
}

std::optional<double> node_slope(const SplitContext& ctx, std::span<const std::uint32_t> rows) {
  Moments m;
  for (auto r : rows) m.add(ctx, r);
  return m.slope();
}

std::optional<SplitRule> best_split(const SplitContext& ctx,
                                    std::span<const std::uint32_t> split_rows,
                                    std::span<const std::uint32_t> estimate_rows) {
  const int min_leaf = ctx.min_leaf_size;
  if (split_rows.size() < 2u * min_leaf || estimate_rows.size() < 2u * min_leaf) return std::nullopt;

  Moments total;
  for (auto r : split_rows) total.add(ctx, r);
  const double est_total = static_cast<double>(estimate_rows.size());
  const int est_treated_total = count_treated(ctx, estimate_rows);

  std::optional<SplitRule> best;
  std::vector<std::pair<double, std::uint32_t>> items(split_rows.size());
  std::vector<std::pair<double, bool>> est(estimate_rows.size());
  std::vector<double> values(split_rows.size());

  for (Eigen::Index f = 0; f < ctx.x.cols(); ++f) {
    for (std::size_t i = 0; i < split_rows.size(); ++i) {
      items[i] = {ctx.x(split_rows[i], f), split_rows[i]};
      values[i] = items[i].first;
    }
    const auto thresholds = candidate_thresholds(values, ctx.max_thresholds);
    if (thresholds.empty()) continue;
    std::sort(items.begin(), items.end());
    for (std::size_t i = 0; i < estimate_rows.size(); ++i)
      est[i] = {ctx.x(estimate_rows[i], f), ctx.t(estimate_rows[i]) > 0.5};
    std::sort(est.begin(), est.end());

    Moments left;
    std::size_t ps = 0, pe = 0;
    double est_left = 0;
    int est_left_treated = 0;
    for (double thr : thresholds) {
      while (ps < items.size() && items[ps].first <= thr) left.add(ctx, items[ps++].second);
      while (pe < est.size() && est[pe].first <= thr) {
        est_left += 1;
        est_left_treated += est[pe++].second ? 1 : 0;
      }
      const Moments right = total.minus(left);
      if (!admissible(left.n, left.treated, min_leaf) ||
          !admissible(right.n, right.treated, min_leaf) ||
          !admissible(est_left, est_left_treated, min_leaf) ||
          !admissible(est_total - est_left, est_treated_total - est_left_treated, min_leaf))
        continue;
      const auto sl = left.slope();
      const auto sr = right.slope();
      if (!sl || !sr) continue;
      const double diff = *sl - *sr;
      const double score = left.n * right.n / (left.n + right.n) * diff * diff;
      if (!best || score > best->score) best = SplitRule{static_cast<int>(f), thr, score};
    }
  }
  return best;
}

CausalTree grow_tree(const SplitContext& ctx, std::vector<std::uint32_t> split_rows,
                     std::vector<std::uint32_t> estimate_rows, int max_depth) {
  CausalTree tree;
  std::sort(split_rows.begin(), split_rows.end());
  std::sort(estimate_rows.begin(), estimate_rows.end());
  tree.split_half = split_rows;
  tree.estimate_half = estimate_rows;

  struct Pending {
    int node;
    int depth;
    std::vector<std::uint32_t> split;
    std::vector<std::uint32_t> estimate;
  };
  std::vector<Pending> stack;
  tree.nodes.emplace_back();
  stack.push_back({0, 0, std::move(split_rows), std::move(estimate_rows)});

  while (!stack.empty()) {
    Pending cur = std::move(stack.back());
    stack.pop_back();
    std::optional<SplitRule> rule;
    if (cur.depth < max_depth) rule = best_split(ctx, cur.split, cur.estimate);
    if (!rule) {
      tree.nodes[cur.node].leaf = static_cast<int>(tree.leaves.size());
      tree.leaves.push_back(std::move(cur.estimate));
      continue;
    }
    auto partition = [&](const std::vector<std::uint32_t>& rows) {
      std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>> out;
      for (auto r : rows)
        (ctx.x(r, rule->feature) <= rule->threshold ? out.first : out.second).push_back(r);
      return out;
    };
    auto [split_l, split_r] = partition(cur.split);
    auto [est_l, est_r] = partition(cur.estimate);

    const int left = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    TreeNode& nd = tree.nodes[cur.node];
    nd.feature = rule->feature;
    nd.threshold = rule->threshold;
    nd.left = left;
    nd.right = left + 1;
    // Right pushed first so the left subtree is expanded first.
    stack.push_back({left + 1, cur.depth + 1, std::move(split_r), std::move(est_r)});
    stack.push_back({left, cur.depth + 1, std::move(split_l), std::move(est_l)});
  }
  return tree;
}

}  // namespace prescribe::orf
