#include "splitsim/trace.hpp"

#include "json.hpp"

namespace splitsim {

namespace {
using Json = nlohmann::ordered_json;

Json value_to_json(const TraceEvent::Value& v) {
  return std::visit([](const auto& x) { return Json(x); }, v);
}
}  // namespace

std::optional<std::string> TraceEvent::str(std::string_view key) const {
  const Value* v = find(key);
  if (!v) return std::nullopt;
  if (const std::string* s = std::get_if<std::string>(v)) return *s;
  return std::nullopt;
}

std::optional<std::uint64_t> TraceEvent::num(std::string_view key) const {
  const Value* v = find(key);
  if (!v) return std::nullopt;
  if (const std::uint64_t* u = std::get_if<std::uint64_t>(v)) return *u;
  if (const std::int64_t* i = std::get_if<std::int64_t>(v))
    return *i >= 0 ? std::optional<std::uint64_t>(static_cast<std::uint64_t>(*i)) : std::nullopt;
  return std::nullopt;
}

std::string TraceEvent::to_json_line() const {
  Json j;
  j["tick"] = tick;
  j["event"] = event;
  j["domain"] = domain ? Json(*domain) : Json(nullptr);
  j["mailbox"] = mailbox ? Json(*mailbox) : Json(nullptr);
  Json d = Json::object();
  for (const auto& [k, v] : detail) d[k] = value_to_json(v);
  j["detail"] = d;
  return j.dump();
}

std::string TraceLog::to_jsonl() const {
  std::string out;
  for (const TraceEvent& e : events_) {
    out += e.to_json_line();
    out += '\n';
  }
  return out;
}

Result<std::vector<TraceEvent>> TraceLog::parse_jsonl(const std::string& text) {
  std::vector<TraceEvent> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return Err::BadFrame;
    TraceEvent e;
    e.tick = j.value("tick", 0ull);
    e.event = j.value("event", "");
    if (j.contains("domain") && !j["domain"].is_null())
      e.domain = j["domain"].get<DomainId>();
    if (j.contains("mailbox") && !j["mailbox"].is_null())
      e.mailbox = j["mailbox"].get<MailboxId>();
    Json detail = j.value("detail", Json::object());
    for (auto& [k, v] : detail.items()) {
      if (v.is_string()) e.with(k, v.get<std::string>());
      else if (v.is_boolean()) e.with(k, v.get<bool>());
      else if (v.is_number_unsigned()) e.with(k, v.get<std::uint64_t>());
      else if (v.is_number_integer()) e.with(k, v.get<std::int64_t>());
    }
    out.push_back(std::move(e));
  }
  return out;
}

const TraceEvent* TraceLog::first(std::string_view event, std::optional<DomainId> domain,
                                  std::size_t from) const {
  for (std::size_t i = from; i < events_.size(); ++i) {
    const TraceEvent& e = events_[i];
    if (e.event == event && (!domain || e.domain == domain)) return &e;
  }
  return nullptr;
}

std::vector<const TraceEvent*> TraceLog::all(std::string_view event,
                                             std::optional<DomainId> domain) const {
  std::vector<const TraceEvent*> out;
  for (const TraceEvent& e : events_)
    if (e.event == event && (!domain || e.domain == domain)) out.push_back(&e);
  return out;
}

}  // namespace splitsim
