#include "demopos/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "demopos/extraction.hpp"

namespace demopos {
namespace {

using nlohmann::json;

std::vector<double> l2_normalized(const std::vector<double>& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) return v;
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return out;
}

double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return 1.0 - dot;
}

}  // namespace

std::vector<double> HashedBowEmbedder::embed(const std::string& text) const {
  std::vector<double> v(dimension_, 0.0);
  for (const std::string& token : split_whitespace(normalize(text))) {
    std::uint64_t h = fnv1a64(token);
    std::size_t slot = static_cast<std::size_t>(h % dimension_);
    double sign = (h >> 63) ? -1.0 : 1.0;
    v[slot] += sign;
  }
  return v;
}

std::vector<ReferenceEntry> build_reference(const std::vector<QueryOutcome>& outcomes,
                                            const Embedder& embedder) {
  std::vector<ReferenceEntry> refs;
  refs.reserve(outcomes.size());
  for (const QueryOutcome& outcome : outcomes) {
    PromptLayout best = PromptLayout::kSsp;
    double best_score = -std::numeric_limits<double>::infinity();
    for (PromptLayout layout : kLayoutPriority) {
      auto it = outcome.layout_scores.find(layout);
      if (it == outcome.layout_scores.end()) {
        throw Error("query " + outcome.query_id + " missing score for layout " +
                    to_string(layout));
      }
      if (it->second > best_score) {
        best_score = it->second;
        best = layout;  // priority order: earlier layouts win exact ties
      }
    }
    refs.push_back(ReferenceEntry{outcome.query_id, embedder.embed(outcome.text), best});
  }
  return refs;
}

PromptLayout select_position(const std::string& query_text,
                             const std::vector<ReferenceEntry>& refs, std::size_t k,
                             const Embedder& embedder) {
  if (refs.empty()) {
    throw Error("empty reference set");
  }
  if (k < 1 || k > refs.size()) {
    throw Error("k must be in [1, |refs|]");
  }
  for (const ReferenceEntry& ref : refs) {
    if (ref.embedding.size() != embedder.dimension()) {
      throw Error("reference embedding dimension " + std::to_string(ref.embedding.size()) +
                  " does not match embedder dimension " + std::to_string(embedder.dimension()));
    }
  }

  std::vector<double> query = l2_normalized(embedder.embed(query_text));
  struct Neighbor {
    double distance;
    const ReferenceEntry* entry;
  };
  std::vector<Neighbor> neighbors;
  neighbors.reserve(refs.size());
  for (const ReferenceEntry& ref : refs) {
    neighbors.push_back(Neighbor{cosine_distance(query, l2_normalized(ref.embedding)), &ref});
  }
  std::sort(neighbors.begin(), neighbors.end(), [](const Neighbor& x, const Neighbor& y) {
    if (x.distance != y.distance) return x.distance < y.distance;
    return x.entry->instance_id < y.entry->instance_id;
  });

  std::map<PromptLayout, std::size_t> votes;
  for (std::size_t i = 0; i < k; ++i) {
    ++votes[neighbors[i].entry->best_layout];
  }
  PromptLayout winner = kLayoutPriority.front();
  std::size_t best_votes = 0;
  for (PromptLayout layout : kLayoutPriority) {
    auto it = votes.find(layout);
    if (it != votes.end() && it->second > best_votes) {
      best_votes = it->second;
      winner = layout;
    }
  }
  return winner;
}

std::vector<ReferenceEntry> load_reference(const std::filesystem::path& path) {
  std::vector<ReferenceEntry> refs;
  int line_no = 0;
  std::size_t dimension = 0;
  for (const std::string& line : read_lines(path)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw SchemaError("line " + std::to_string(line_no) + ": not a JSON object");
    }
    ReferenceEntry entry;
    entry.instance_id = j.at("id").get<std::string>();
    entry.embedding = j.at("embedding").get<std::vector<double>>();
    entry.best_layout = layout_from_string(j.at("best_layout").get<std::string>());
    if (entry.best_layout == PromptLayout::kZeroShot) {
      throw SchemaError("line " + std::to_string(line_no) + ": best_layout cannot be zero_shot");
    }
    if (dimension == 0) dimension = entry.embedding.size();
    if (entry.embedding.size() != dimension) {
      throw SchemaError("line " + std::to_string(line_no) + ": embedding dimension mismatch");
    }
    refs.push_back(std::move(entry));
  }
  return refs;
}

void save_reference(const std::filesystem::path& path, const std::vector<ReferenceEntry>& refs) {
  std::string out;
  for (const ReferenceEntry& ref : refs) {
    json j = {{"id", ref.instance_id},
              {"embedding", ref.embedding},
              {"best_layout", to_string(ref.best_layout)}};
    out += j.dump();
    out += "\n";
  }
  write_file_atomic(path, out);
}

}  // namespace demopos
