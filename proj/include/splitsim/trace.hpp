#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "splitsim/mailbox.hpp"

namespace splitsim {

/// One machine event. Serialized as a JSON line with the fields
/// tick, event, domain, mailbox, detail — see docs/formats.md.
struct TraceEvent {
  using Value = std::variant<std::int64_t, std::uint64_t, std::string, bool>;

  Tick tick = 0;
  std::string event;
  std::optional<DomainId> domain;
  std::optional<MailboxId> mailbox;
  std::vector<std::pair<std::string, Value>> detail;

  TraceEvent& with(std::string key, Value v) {
    detail.emplace_back(std::move(key), std::move(v));
    return *this;
  }
  const Value* find(std::string_view key) const {
    for (const auto& [k, v] : detail)
      if (k == key) return &v;
    return nullptr;
  }
  std::optional<std::string> str(std::string_view key) const;
  std::optional<std::uint64_t> num(std::string_view key) const;

  std::string to_json_line() const;
};

class TraceLog {
 public:
  TraceEvent& append(TraceEvent e) {
    events_.push_back(std::move(e));
    return events_.back();
  }
  const std::vector<TraceEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }

  std::string to_jsonl() const;
  static Result<std::vector<TraceEvent>> parse_jsonl(const std::string& text);

  /// First event matching name (and optional domain), or nullptr.
  const TraceEvent* first(std::string_view event,
                          std::optional<DomainId> domain = std::nullopt,
                          std::size_t from = 0) const;
  std::vector<const TraceEvent*> all(std::string_view event,
                                     std::optional<DomainId> domain = std::nullopt) const;

 private:
  std::vector<TraceEvent> events_;
};

}  // namespace splitsim
