#pragma once

#include "sp4d/core.hpp"
#include "sp4d/labels.hpp"

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace sp4d {

// Minimum-cost assignment of rows to distinct columns (rows <= cols).
// Returns the column chosen for every row.
inline std::vector<int> hungarian_min_cost(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) return {};
  const int m = static_cast<int>(cost[0].size());
  if (m < n) throw ParameterError("hungarian: more rows than columns");
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials and matching with 1-based sentinel column 0.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> match(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (match[j] != 0) row_to_col[match[j] - 1] = j - 1;
  }
  return row_to_col;
}

// One-to-one matching maximizing the total overlap of a contingency table.
// Returns the matched column per row, or -1 when a row gets no real column.
inline std::vector<int> max_agreement_matching(const std::vector<std::vector<long>>& table) {
  const std::size_t rows = table.size();
  const std::size_t cols = rows ? table[0].size() : 0;
  if (rows == 0) return {};
  const std::size_t size = std::max(rows, cols);
  long peak = 0;
  for (const auto& r : table)
    for (long c : r) peak = std::max(peak, c);
  std::vector<std::vector<double>> cost(size, std::vector<double>(size, static_cast<double>(peak)));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) cost[i][j] = static_cast<double>(peak - table[i][j]);
  const std::vector<int> assign = hungarian_min_cost(cost);
  std::vector<int> out(rows, -1);
  for (std::size_t i = 0; i < rows; ++i) {
    if (assign[i] >= 0 && static_cast<std::size_t>(assign[i]) < cols) out[i] = assign[i];
  }
  return out;
}

struct EvalReport {
  double accuracy = 0.0;             // matched dynamic points / dynamic points
  double id_consistency = 0.0;       // GT objects whose per-frame majority id equals their match in every frame
  double frame_id_consistency = 0.0; // same test over (object, frame) pairs
  int gt_dynamic_objects = 0;
  int pred_dynamic_instances = 0;
  int instance_count_error = 0;
  long dynamic_points = 0;
  std::optional<double> flow_epe;
  std::map<int, int> matching;  // GT object -> predicted instance (-1 when unmatched)
};

// Hungarian matching over ground-truth dynamic points. Predicted ids may be any
// integers; NOISE/GROUND predictions never match.
inline EvalReport evaluate(const std::vector<LabelTable>& pred, const std::vector<LabelTable>& gt) {
  if (pred.size() != gt.size()) throw FormatError("evaluate: prediction and ground truth differ in frame count");
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (pred[t].size() != gt[t].size()) {
      throw FormatError("evaluate: frame " + std::to_string(t) + " differs in point count");
    }
  }

  std::map<int, int> gt_row, pred_col;
  std::set<int> pred_dynamic;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    for (std::size_t i = 0; i < gt[t].size(); ++i) {
      if (pred[t].motion[i] == kMotionDynamic && pred[t].instance[i] >= 0) pred_dynamic.insert(pred[t].instance[i]);
      if (gt[t].motion[i] != kMotionDynamic) continue;
      gt_row.try_emplace(gt[t].instance[i], 0);
      if (pred[t].instance[i] >= 0) pred_col.try_emplace(pred[t].instance[i], 0);
    }
  }
  int r = 0;
  for (auto& [id, row] : gt_row) row = r++;
  int c = 0;
  for (auto& [id, col] : pred_col) col = c++;

  std::vector<std::vector<long>> table(gt_row.size(), std::vector<long>(pred_col.size(), 0));
  EvalReport report;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    for (std::size_t i = 0; i < gt[t].size(); ++i) {
      if (gt[t].motion[i] != kMotionDynamic) continue;
      ++report.dynamic_points;
      if (pred[t].instance[i] >= 0) ++table[gt_row.at(gt[t].instance[i])][pred_col.at(pred[t].instance[i])];
    }
  }
  const std::vector<int> match = max_agreement_matching(table);
  std::vector<int> col_id(pred_col.size());
  for (const auto& [id, col] : pred_col) col_id[col] = id;

  long agree = 0;
  for (const auto& [gid, row] : gt_row) {
    const int col = match[row];
    report.matching[gid] = col >= 0 ? col_id[col] : -1;
    if (col >= 0) agree += table[row][col];
  }
  report.accuracy = report.dynamic_points > 0 ? static_cast<double>(agree) / report.dynamic_points : 1.0;

  // Per-frame majority predicted id of each dynamic object (lowest id on ties).
  long object_frames = 0, consistent_frames = 0;
  std::map<int, bool> object_ok;
  for (const auto& [gid, row] : gt_row) object_ok[gid] = true;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    std::map<int, std::map<int, long>> votes;
    for (std::size_t i = 0; i < gt[t].size(); ++i) {
      if (gt[t].motion[i] == kMotionDynamic) ++votes[gt[t].instance[i]][pred[t].instance[i]];
    }
    for (const auto& [gid, tally] : votes) {
      int best = 0;
      long best_n = -1;
      for (const auto& [pid, n] : tally) {
        if (n > best_n) {
          best = pid;
          best_n = n;
        }
      }
      ++object_frames;
      const int matched = report.matching.at(gid);
      const bool ok = matched >= 0 && best == matched;
      consistent_frames += ok;
      if (!ok) object_ok[gid] = false;
    }
  }
  long consistent_objects = 0;
  for (const auto& [gid, ok] : object_ok) consistent_objects += ok;
  report.gt_dynamic_objects = static_cast<int>(gt_row.size());
  report.id_consistency = gt_row.empty() ? 1.0 : static_cast<double>(consistent_objects) / gt_row.size();
  report.frame_id_consistency = object_frames ? static_cast<double>(consistent_frames) / object_frames : 1.0;
  report.pred_dynamic_instances = static_cast<int>(pred_dynamic.size());
  report.instance_count_error = std::abs(report.pred_dynamic_instances - report.gt_dynamic_objects);
  return report;
}

// Mean endpoint error over points that are not ground in the ground truth.
inline double flow_epe(const FlowField& pred, const FlowField& gt, const std::vector<LabelTable>& gt_labels) {
  if (pred.pair_count() != gt.pair_count()) throw FormatError("flow_epe: pair counts differ");
  double sum = 0.0;
  long n = 0;
  for (int t = 0; t < gt.pair_count(); ++t) {
    if (pred[t].size() != gt[t].size()) throw FormatError("flow_epe: frame " + std::to_string(t) + " size mismatch");
    for (std::size_t i = 0; i < gt[t].size(); ++i) {
      if (t < static_cast<int>(gt_labels.size()) && gt_labels[t].motion[i] == kMotionGround) continue;
      sum += (pred[t][i] - gt[t][i]).norm();
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

}  // namespace sp4d
