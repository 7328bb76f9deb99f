#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "demopos/prompting.hpp"
#include "demopos/util.hpp"

namespace demopos {

/// One annotated instance: its embedding and the demo layout that scored
/// best for it. best_layout is never zero_shot.
struct ReferenceEntry {
  std::string instance_id;
  std::vector<double> embedding;
  PromptLayout best_layout = PromptLayout::kSsp;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(const std::string& text) const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::string name() const = 0;
};

/// Deterministic hashed bag-of-words embedder so calibration is fully
/// testable offline. Production use plugs an embedding endpoint instead.
class HashedBowEmbedder : public Embedder {
 public:
  explicit HashedBowEmbedder(std::size_t dimension = 64) : dimension_(dimension) {}
  std::vector<double> embed(const std::string& text) const override;
  std::size_t dimension() const override { return dimension_; }
  std::string name() const override { return "hashed_bow"; }

 private:
  std::size_t dimension_;
};

/// Tie-break order for best-layout annotation and vote ties: early positions
/// first.
inline constexpr std::array<PromptLayout, 4> kLayoutPriority = {
    PromptLayout::kSsp, PromptLayout::kEsp, PromptLayout::kSum, PromptLayout::kEum};

/// Per-query audit outcome used to annotate the reference set.
struct QueryOutcome {
  std::string query_id;
  std::string text;
  std::map<PromptLayout, double> layout_scores;
};

/// best_layout = argmax score over the four ICL layouts, ties broken by
/// kLayoutPriority. Throws when a query misses a layout.
std::vector<ReferenceEntry> build_reference(const std::vector<QueryOutcome>& outcomes,
                                            const Embedder& embedder);

/// k-NN majority vote by cosine distance over L2-normalized embeddings.
/// Distance ties break by instance_id, vote ties by kLayoutPriority.
PromptLayout select_position(const std::string& query_text,
                             const std::vector<ReferenceEntry>& refs, std::size_t k,
                             const Embedder& embedder);

std::vector<ReferenceEntry> load_reference(const std::filesystem::path& path);
void save_reference(const std::filesystem::path& path, const std::vector<ReferenceEntry>& refs);

}  // namespace demopos
