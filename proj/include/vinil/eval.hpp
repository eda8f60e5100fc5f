#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "vinil/data.hpp"
#include "vinil/model.hpp"

namespace vinil {

/// Row-aligned gallery embeddings with their instance and task ids.
struct GalleryIndex {
  int rows = 0;
  int dim = 0;
  std::vector<double> embeddings;  // rows x dim, row-major
  std::vector<int> instance_ids;
  std::vector<int> task_ids;

  const double* row(int r) const { return &embeddings[static_cast<size_t>(r) * dim]; }
};

/// Embeds every gallery sample in fixed order. Inference only: nothing is
/// watched, so no graph is recorded.
inline GalleryIndex embed_gallery(const ModelState& model, const std::vector<Sample>& gallery,
                                  const std::map<int, int>* instance_task = nullptr,
                                  int batch_size = 128) {
  check(!gallery.empty(), "embed_gallery: empty gallery");
  check(batch_size >= 1, "embed_gallery: batch_size must be >= 1");
  GalleryIndex index;
  index.rows = static_cast<int>(gallery.size());
  index.dim = model.config.embed_dim;
  index.embeddings.resize(static_cast<size_t>(index.rows) * index.dim);
  index.instance_ids.reserve(gallery.size());
  index.task_ids.reserve(gallery.size());
  for (const Sample& s : gallery) {
    index.instance_ids.push_back(s.instance_id);
    int task = 0;
    if (instance_task) {
      auto it = instance_task->find(s.instance_id);
      check(it != instance_task->end(), "embed_gallery: no task for instance ", s.instance_id);
      task = it->second;
    }
    index.task_ids.push_back(task);
  }
  const int C = model.config.channels, H = model.config.height, W = model.config.width;
  for (int start = 0; start < index.rows; start += batch_size) {
    const int count = std::min(batch_size, index.rows - start);
    Tensor batch({count, C, H, W});
    for (int i = 0; i < count; ++i) {
      const Tensor& img = gallery[static_cast<size_t>(start + i)].image;
      check(img.size() == static_cast<int64_t>(C) * H * W, "embed_gallery: image ", start + i,
            " has shape ", shape_str(img.shape), ", model expects (", C, ", ", H, ", ", W, ")");
      std::copy(img.values.begin(), img.values.end(),
                batch.values.begin() + static_cast<int64_t>(i) * C * H * W);
    }
    Tape tape;
    Tensor h = encode(tape, model, batch);
    std::copy(h.values.begin(), h.values.end(),
              index.embeddings.begin() + static_cast<int64_t>(start) * index.dim);
  }
  return index;
}

namespace detail {

inline double squared_distance(const double* a, const double* b, int dim) {
  double acc = 0.0;
  for (int i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

/// Majority vote over (distance^2, row) pairs of the k nearest neighbors;
/// ties break by smaller summed distance, then smaller instance id.
inline int vote(const std::vector<std::pair<double, int>>& neighbors,
                const std::vector<int>& instance_ids) {
  std::map<int, std::pair<int, double>> tally;  // id -> (count, summed distance)
  for (const auto& [d2, row] : neighbors) {
    auto& entry = tally[instance_ids[static_cast<size_t>(row)]];
    entry.first += 1;
    entry.second += std::sqrt(d2);
  }
  int best_id = -1;
  int best_count = -1;
  double best_sum = 0.0;
  for (const auto& [id, entry] : tally) {
    const auto& [count, sum] = entry;
    const bool better = count > best_count ||
                        (count == best_count && sum < best_sum) ||
                        (count == best_count && sum == best_sum && id < best_id);
    if (better) {
      best_id = id;
      best_count = count;
      best_sum = sum;
    }
  }
  return best_id;
}

}  // namespace detail

/// Leave-one-out k-NN prediction for gallery row `query_row`. k is
/// clamped to rows-1; neighbor order is the total order (distance, row).
inline int knn_predict(const GalleryIndex& index, int query_row, int k = 100) {
  check(index.rows >= 2, "knn_predict: need at least 2 gallery rows, got ", index.rows);
  check(query_row >= 0 && query_row < index.rows, "knn_predict: query row ", query_row,
        " outside [0, ", index.rows, ")");
  check(k >= 1, "knn_predict: k must be >= 1");
  k = std::min(k, index.rows - 1);
  std::vector<std::pair<double, int>> dist;
  dist.reserve(static_cast<size_t>(index.rows) - 1);
  const double* q = index.row(query_row);
  for (int r = 0; r < index.rows; ++r) {
    if (r == query_row) continue;  // a query never votes for itself
    dist.emplace_back(detail::squared_distance(q, index.row(r), index.dim), r);
  }
  std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
  dist.resize(static_cast<size_t>(k));
  return detail::vote(dist, index.instance_ids);
}

/// One evaluation pass: per-task leave-one-out retrieval accuracy plus the
/// overall accuracy over all gallery rows.
struct SessionColumn {
  std::vector<double> per_task;
  double overall = 0.0;
};

inline SessionColumn session_eval(const GalleryIndex& index, int n_tasks, int k = 100) {
  check(n_tasks >= 1, "session_eval: n_tasks must be >= 1");
  SessionColumn col;
  col.per_task.assign(static_cast<size_t>(n_tasks), 0.0);
  std::vector<int> counts(static_cast<size_t>(n_tasks), 0);
  int correct_total = 0;
  for (int r = 0; r < index.rows; ++r) {
    const int task = index.task_ids[static_cast<size_t>(r)];
    check(task >= 0 && task < n_tasks, "session_eval: row ", r, " has task id ", task,
          " outside [0, ", n_tasks, ")");
    const bool correct =
        knn_predict(index, r, k) == index.instance_ids[static_cast<size_t>(r)];
    counts[static_cast<size_t>(task)] += 1;
    if (correct) {
      col.per_task[static_cast<size_t>(task)] += 1.0;
      ++correct_total;
    }
  }
  for (int t = 0; t < n_tasks; ++t)
    if (counts[static_cast<size_t>(t)] > 0) col.per_task[static_cast<size_t>(t)] /= counts[static_cast<size_t>(t)];
  col.overall = index.rows > 0 ? static_cast<double>(correct_total) / index.rows : 0.0;
  return col;
}

/// a[task][session]: task-slice accuracy measured after each session. One
/// column is appended per session; entries for tasks not yet introduced
/// are recorded for the heatmap but masked out of both metrics.
struct SessionMatrix {
  std::vector<std::vector<double>> a;

  int tasks() const { return static_cast<int>(a.size()); }
  int sessions() const { return a.empty() ? 0 : static_cast<int>(a[0].size()); }

  void append_column(const std::vector<double>& per_task) {
    if (a.empty()) a.resize(per_task.size());
    check(a.size() == per_task.size(), "SessionMatrix: column of ", per_task.size(),
          " tasks appended to a matrix of ", a.size());
    for (size_t t = 0; t < per_task.size(); ++t) {
      check(per_task[t] >= 0.0 && per_task[t] <= 1.0, "SessionMatrix: accuracy ", per_task[t],
            " outside [0, 1]");
      a[t].push_back(per_task[t]);
    }
  }
};

/// Acc: for each session, average over the tasks seen so far; then average
/// across sessions.
inline double accuracy_metric(const SessionMatrix& matrix) {
  const int S = matrix.sessions(), T = matrix.tasks();
  check(S >= 1 && T >= 1, "accuracy_metric: empty session matrix");
  double total = 0.0;
  for (int s = 0; s < S; ++s) {
    double seen = 0.0;
    int n = 0;
    for (int t = 0; t <= s && t < T; ++t) {
      seen += matrix.a[static_cast<size_t>(t)][static_cast<size_t>(s)];
      ++n;
    }
    total += seen / n;
  }
  return total / S;
}

/// For: per task, the gap between its best accuracy over the sessions
/// where it was measured and its final accuracy; averaged over tasks with
/// at least two measurements.
inline double forgetting_metric(const SessionMatrix& matrix) {
  const int S = matrix.sessions(), T = matrix.tasks();
  check(S >= 2, "forgetting_metric: need at least 2 sessions, got ", S);
  double total = 0.0;
  int n = 0;
  for (int t = 0; t < T; ++t) {
    if (S - t < 2) continue;  // introduced in the last session: one measurement
    double best = 0.0;
    for (int s = t; s < S; ++s)
      best = std::max(best, matrix.a[static_cast<size_t>(t)][static_cast<size_t>(s)]);
    total += best - matrix.a[static_cast<size_t>(t)][static_cast<size_t>(S - 1)];
    ++n;
  }
  check(n > 0, "forgetting_metric: no task measured at least twice");
  return total / n;
}

/// %drop = 100 * (same - cross) / same; both accuracies in the same units.
inline double relative_drop_pct(double same_domain_acc, double cross_acc) {
  check(same_domain_acc > 0.0, "relative_drop_pct: same-domain accuracy must be positive, got ",
        same_domain_acc);
  return 100.0 * (same_domain_acc - cross_acc) / same_domain_acc;
}

struct CrossEvalResult {
  double cross_acc = 0.0;        // fraction in [0, 1]
  double relative_drop = 0.0;    // percent
};

/// Leave-one-out retrieval on a foreign gallery, reported with the
/// relative drop against a supplied same-domain accuracy (fraction).
inline CrossEvalResult cross_dataset_eval(const ModelState& model,
                                          const std::vector<Sample>& foreign_gallery,
                                          double same_domain_acc, int k = 100) {
  check(!foreign_gallery.empty(), "cross_dataset_eval: empty foreign gallery");
  GalleryIndex index = embed_gallery(model, foreign_gallery);
  int correct = 0;
  for (int r = 0; r < index.rows; ++r)
    if (knn_predict(index, r, k) == index.instance_ids[static_cast<size_t>(r)]) ++correct;
  CrossEvalResult result;
  result.cross_acc = static_cast<double>(correct) / index.rows;
  result.relative_drop = relative_drop_pct(same_domain_acc, result.cross_acc);
  return result;
}

}  // namespace vinil
