#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "demopos/corpus.hpp"

namespace demopos {

/// Where the demo block sits. The four ICL layouts move an identical block of
/// demos between the start/end of the system message (ssp/esp) and the
/// start/end of the user message (sum/eum); zero_shot omits it.
enum class PromptLayout { kZeroShot, kSsp, kEsp, kSum, kEum };

/// Fixed ordering for reports, cache layout, and iteration.
inline constexpr std::array<PromptLayout, 5> kLayoutOrder = {
    PromptLayout::kZeroShot, PromptLayout::kSsp, PromptLayout::kEsp, PromptLayout::kSum,
    PromptLayout::kEum};

/// The four demo-carrying layouts, in report order.
inline constexpr std::array<PromptLayout, 4> kIclLayouts = {
    PromptLayout::kSsp, PromptLayout::kEsp, PromptLayout::kSum, PromptLayout::kEum};

std::string to_string(PromptLayout layout);
PromptLayout layout_from_string(const std::string& name);
std::size_t layout_index(PromptLayout layout);

/// Lead-in line placed directly before the demo block, in every layout.
inline constexpr std::string_view kDemoLeadIn =
    "Use the demos below as examples on how to answer the question";

/// Line that opens the user message in the eum layout, ahead of the query.
inline constexpr std::string_view kEumQueryLeadIn = "Answer this question";

enum class Role { kSystem, kUser };

struct ChatMessage {
  Role role;
  std::string content;
};

/// Exactly one system message followed by exactly one user message.
struct ChatPrompt {
  std::vector<ChatMessage> messages;

  const std::string& system() const { return messages.at(0).content; }
  const std::string& user() const { return messages.at(1).content; }
};

struct DemoBlock {
  std::string rendered;
  std::size_t count = 0;
};

/// Renders demos as "Question: {input}\nAnswer: {gold}\n\n" per demo
/// ("Article:/Summary:" for summarization). The same demos always render to
/// the same bytes, so the block is position-invariant by construction.
DemoBlock render_demos(const std::vector<DemoExample>& demos, TaskKind kind);

ChatPrompt assemble(const std::string& system_prompt, const DemoBlock& demos,
                    const QueryInstance& query, PromptLayout layout);

/// One prompt per layout for the task's first query, for snapshot tests.
std::vector<ChatPrompt> golden_fixtures(const TaskSpec& task);

/// Stable plain-text rendering of a prompt, used for golden files.
std::string serialize_prompt(const ChatPrompt& prompt);

}  // namespace demopos
