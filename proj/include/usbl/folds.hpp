#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace usbl {

struct CVConfig {
  int k = 5;
  int r = 10;
  std::uint64_t seed = 0;
  bool stratified = true;
  // Permit a plain shuffled split when a class has fewer than k members.
  bool allow_unstratified = false;

  void validate() const;
};

struct Fold {
  int repeat = 0;
  int fold = 0;
  std::vector<int> train;
  std::vector<int> test;
};

struct FoldAssignment {
  int k = 0;
  int r = 0;
  bool stratified = true;
  std::vector<Fold> folds;  // repeat-major

  double mean_train_size() const;
  double mean_test_size() const;
};

/// Participant-level folds. Each class is shuffled per repeat and dealt
/// round-robin so fold sizes and class counts differ by at most one.
FoldAssignment make_folds(std::span<const int> labels, const CVConfig& cfg);

}  // namespace usbl
