#include "demopos/prompting.hpp"

namespace demopos {

std::string to_string(PromptLayout layout) {
  switch (layout) {
    case PromptLayout::kZeroShot: return "zero_shot";
    case PromptLayout::kSsp: return "ssp";
    case PromptLayout::kEsp: return "esp";
    case PromptLayout::kSum: return "sum";
    case PromptLayout::kEum: return "eum";
  }
  throw Error("unknown layout");
}

PromptLayout layout_from_string(const std::string& name) {
  if (name == "zero_shot") return PromptLayout::kZeroShot;
  if (name == "ssp") return PromptLayout::kSsp;
  if (name == "esp") return PromptLayout::kEsp;
  if (name == "sum") return PromptLayout::kSum;
  if (name == "eum") return PromptLayout::kEum;
  throw SchemaError("unknown layout: " + name);
}

std::size_t layout_index(PromptLayout layout) {
  for (std::size_t i = 0; i < kLayoutOrder.size(); ++i) {
    if (kLayoutOrder[i] == layout) return i;
  }
  throw Error("unknown layout");
}

DemoBlock render_demos(const std::vector<DemoExample>& demos, TaskKind kind) {
  if (demos.empty()) {
    throw Error("cannot render an empty demo list");
  }
  const char* input_label = kind == TaskKind::kSummarization ? "Article: " : "Question: ";
  const char* gold_label = kind == TaskKind::kSummarization ? "Summary: " : "Answer: ";
  DemoBlock block;
  block.count = demos.size();
  for (const DemoExample& demo : demos) {
    block.rendered += input_label;
    block.rendered += demo.input_text;
    block.rendered += "\n";
    block.rendered += gold_label;
    block.rendered += demo.gold;
    block.rendered += "\n\n";
  }
  return block;
}

ChatPrompt assemble(const std::string& system_prompt, const DemoBlock& demos,
                    const QueryInstance& query, PromptLayout layout) {
  if (layout != PromptLayout::kZeroShot && demos.count == 0) {
    throw Error("layout " + to_string(layout) + " requires at least one demo");
  }
  const std::string lead_in(kDemoLeadIn);
  // The demo block bytes (demos.rendered) appear verbatim in every ICL
  // layout; only the surrounding segments move.
  std::string system;
  std::string user;
  switch (layout) {
    case PromptLayout::kZeroShot:
      system = system_prompt;
      user = query.input_text;
      break;
    case PromptLayout::kSsp:
      system = lead_in + "\n" + demos.rendered + system_prompt;
      user = query.input_text;
      break;
    case PromptLayout::kEsp:
      system = system_prompt + "\n" + lead_in + "\n" + demos.rendered;
      user = query.input_text;
      break;
    case PromptLayout::kSum:
      system = system_prompt;
      user = lead_in + "\n" + demos.rendered + query.input_text;
      break;
    case PromptLayout::kEum:
      system = system_prompt;
      user = std::string(kEumQueryLeadIn) + "\n" + query.input_text + "\n" + lead_in + "\n" +
             demos.rendered;
      break;
  }
  return ChatPrompt{{{Role::kSystem, std::move(system)}, {Role::kUser, std::move(user)}}};
}

std::vector<ChatPrompt> golden_fixtures(const TaskSpec& task) {
  if (task.queries.empty()) {
    throw Error(task.task_id + ": no queries to build fixtures from");
  }
  DemoBlock block = render_demos(task.demo_pool, task.kind);
  std::vector<ChatPrompt> prompts;
  for (PromptLayout layout : kLayoutOrder) {
    prompts.push_back(assemble(task.system_prompt, block, task.queries.front(), layout));
  }
  return prompts;
}

std::string serialize_prompt(const ChatPrompt& prompt) {
  std::string out;
  for (const ChatMessage& message : prompt.messages) {
    out += message.role == Role::kSystem ? "<system>\n" : "<user>\n";
    out += message.content;
    out += "\n";
    out += message.role == Role::kSystem ? "<end_of_system>\n" : "<end_of_user>\n";
  }
  return out;
}

}  // namespace demopos
