#include "usbl/folds.hpp"

#include <algorithm>
#include <string>

#include "usbl/error.hpp"
#include "usbl/rng.hpp"

namespace usbl {

void CVConfig::validate() const {
  if (k < 2) throw Error(ErrorCode::Usage, "folds must be >= 2");
  if (r < 1) throw Error(ErrorCode::Usage, "repeats must be >= 1");
}

double FoldAssignment::mean_train_size() const {
  double s = 0;
  for (const auto& f : folds) s += static_cast<double>(f.train.size());
  return folds.empty() ? 0.0 : s / static_cast<double>(folds.size());
}

double FoldAssignment::mean_test_size() const {
  double s = 0;
  for (const auto& f : folds) s += static_cast<double>(f.test.size());
  return folds.empty() ? 0.0 : s / static_cast<double>(folds.size());
}

FoldAssignment make_folds(std::span<const int> labels, const CVConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(labels.size());
  if (n < cfg.k)
    throw Error(ErrorCode::StratificationFailure,
                std::to_string(n) + " participants cannot fill " + std::to_string(cfg.k) + " folds");
  std::vector<int> by_class[2];
  for (int i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw Error(ErrorCode::LabelMissing, "fold assignment needs 0/1 labels");
    by_class[labels[i]].push_back(i);
  }
  bool stratified = cfg.stratified;
  if (stratified) {
    for (int c = 0; c < 2; ++c) {
      if (static_cast<int>(by_class[c].size()) >= cfg.k) continue;
      if (!cfg.allow_unstratified)
        throw Error(ErrorCode::StratificationFailure,
                    "class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                        " participants, fewer than k=" + std::to_string(cfg.k));
      stratified = false;
    }
  }

  FoldAssignment out;
  out.k = cfg.k;
  out.r = cfg.r;
  out.stratified = stratified;
  for (int rep = 0; rep < cfg.r; ++rep) {
    Rng rng(derive_seed(cfg.seed, {0xF01D, static_cast<std::uint64_t>(rep)}));
    std::vector<int> order;
    if (stratified) {
      for (int c = 0; c < 2; ++c) {
        std::vector<int> members = by_class[c];
        shuffle_in_place(members, rng);
        order.insert(order.end(), members.begin(), members.end());
      }
    } else {
      order.resize(n);
      for (int i = 0; i < n; ++i) order[i] = i;
      shuffle_in_place(order, rng);
    }
    std::vector<int> fold_of(n);
    for (int j = 0; j < n; ++j) fold_of[order[j]] = j % cfg.k;
    for (int f = 0; f < cfg.k; ++f) {
      Fold fold;
      fold.repeat = rep;
      fold.fold = f;
      for (int i = 0; i < n; ++i) (fold_of[i] == f ? fold.test : fold.train).push_back(i);
      out.folds.push_back(std::move(fold));
    }
  }
  return out;
}

}  // namespace usbl
