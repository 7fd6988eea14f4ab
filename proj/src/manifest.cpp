#include "splitsim/manifest.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"

#include "splitsim/bootfs.hpp"

namespace splitsim {

namespace {

using Json = nlohmann::ordered_json;

std::string kind_name(const DomainKind& k) {
  switch (k.tag) {
    case DomainKindTag::ResourceManager: return "resource_manager";
    case DomainKindTag::Tee: return "tee";
    case DomainKindTag::Io: return "io";
    case DomainKindTag::Untrusted: return "untrusted";
  }
  return "tee";
}

std::string device_name(DeviceKind d) {
  switch (d) {
    case DeviceKind::SerialIn: return "serial_in";
    case DeviceKind::SerialOut: return "serial_out";
    case DeviceKind::Storage: return "storage";
    case DeviceKind::Network: return "network";
    case DeviceKind::Sensor: return "sensor";
    case DeviceKind::Pump: return "pump";
  }
  return "serial_in";
}

bool parse_device(const std::string& s, DeviceKind& out) {
  if (s == "serial_in") out = DeviceKind::SerialIn;
  else if (s == "serial_out") out = DeviceKind::SerialOut;
  else if (s == "storage") out = DeviceKind::Storage;
  else if (s == "network") out = DeviceKind::Network;
  else if (s == "sensor") out = DeviceKind::Sensor;
  else if (s == "pump") out = DeviceKind::Pump;
  else return false;
  return true;
}

}  // namespace

const DomainDecl* MachineManifest::find_domain(DomainId id) const {
  for (const DomainDecl& d : domains)
    if (d.id == id) return &d;
  return nullptr;
}

const DomainDecl* MachineManifest::find_by_kind(DomainKindTag tag) const {
  for (const DomainDecl& d : domains)
    if (d.kind.tag == tag) return &d;
  return nullptr;
}

const DomainDecl* MachineManifest::find_by_device(DeviceKind dev) const {
  for (const DomainDecl& d : domains)
    if (d.kind.tag == DomainKindTag::Io && d.kind.device == dev) return &d;
  return nullptr;
}

DomainId MachineManifest::rm_id() const {
  const DomainDecl* d = find_by_kind(DomainKindTag::ResourceManager);
  return d ? d->id : 0;
}

DomainId MachineManifest::untrusted_id() const {
  const DomainDecl* d = find_by_kind(DomainKindTag::Untrusted);
  return d ? d->id : 0;
}

std::string MachineManifest::validate() const {
  if (domains.empty()) return "no domains declared";
  std::set<DomainId> ids;
  std::set<std::uint8_t> pcrs;
  int n_rm = 0, n_untrusted = 0;
  std::set<std::string> image_names;
  for (const ImageDecl& img : images) {
    if (img.name.empty() || img.name.size() > kBootFsNameLen)
      return "image name must be 1..16 bytes: " + img.name;
    if (!image_names.insert(img.name).second) return "duplicate image: " + img.name;
  }
  for (const DomainDecl& d : domains) {
    if (d.id == kTpmEndpoint) return "domain id 0xff is reserved for the tpm endpoint";
    if (!ids.insert(d.id).second) return "duplicate domain id " + std::to_string(d.id);
    if (!pcrs.insert(d.pcr).second) return "duplicate pcr index " + std::to_string(d.pcr);
    if (d.mem_size < 64) return "domain memory too small: " + d.name;
    if (d.kind.tag == DomainKindTag::ResourceManager) ++n_rm;
    if (d.kind.tag == DomainKindTag::Untrusted) ++n_untrusted;
    if (!image_names.count(d.image)) return "domain " + d.name + " references unknown image " + d.image;
    if (d.kind.tag == DomainKindTag::Io && d.kind.device == DeviceKind::Storage &&
        d.device_blocks < 16)
      return "storage domain needs at least 16 device blocks";
  }
  if (n_rm != 1) return "exactly one resource manager domain required";
  if (n_untrusted != 1) return "exactly one untrusted domain required";

  DomainId rm = rm_id();
  std::set<MailboxId> mb_ids;
  for (const MailboxConfig& mb : mailboxes) {
    if (!mb_ids.insert(mb.id).second) return "duplicate mailbox id " + std::to_string(mb.id);
    if (mb.rm != rm) return "mailbox " + std::to_string(mb.id) + " defaults to a non-manager domain";
    if (!ids.count(mb.fixed_end))
      return "mailbox " + std::to_string(mb.id) + " fixed end not a declared domain";
    for (DomainId w : mb.wired_delegates)
      if (!ids.count(w)) return "mailbox " + std::to_string(mb.id) + " wired to undeclared domain";
    if (!mb.valid()) return "mailbox " + std::to_string(mb.id) + " violates its config invariants";
  }

  std::set<std::uint8_t> q_ids;
  for (const QueueDecl& q : queues) {
    if (!q_ids.insert(q.id).second) return "duplicate queue id " + std::to_string(q.id);
    for (DomainId e : {q.end_a, q.end_b})
      if (e != kTpmEndpoint && !ids.count(e))
        return "queue " + q.name + " references undeclared endpoint";
    if (q.end_a == q.end_b) return "queue " + q.name + " connects an endpoint to itself";
    if (q.depth < 1 || q.msg_size < 8) return "queue " + q.name + " geometry invalid";
  }

  const DomainDecl* unt = find_by_kind(DomainKindTag::Untrusted);
  for (const ArbiterDecl& a : arbiters) {
    const DomainDecl* io = find_domain(a.io_domain);
    if (!io || io->kind.tag != DomainKindTag::Io) return "arbiter on a non-io domain";
    bool found = false;
    for (const MailboxConfig& mb : mailboxes)
      if (mb.id == a.data_mailbox && mb.fixed_end == a.io_domain) found = true;
    if (!found) return "arbiter data mailbox not a mailbox of its io domain";
    if (a.window_len == 0 ||
        static_cast<std::uint64_t>(a.window_base) + a.window_len > unt->mem_size)
      return "arbiter dma window outside untrusted memory";
  }

  if (policy.max_msgs < 1 || policy.max_ticks < 1) return "policy caps must be positive";
  return {};
}

namespace {

MailboxConfig make_mb(MailboxId id, DomainId fixed, FixedRole role,
                      std::vector<DomainId> wired, std::uint32_t depth, std::uint32_t msg,
                      DomainId rm) {
  MailboxConfig c;
  c.id = id;
  c.fixed_end = fixed;
  c.fixed_role = role;
  c.wired_delegates = std::move(wired);
  c.depth = depth;
  c.msg_size = msg;
  c.rm = rm;
  return c;
}

}  // namespace

MachineManifest default_manifest() {
  using namespace dom;
  MachineManifest m;
  m.name = "prototype";
  m.domains = {
      {kRm, "rm", DomainKind::rm(), 8192, "rmanager", kRm, 0},
      {kTee1, "tee1", DomainKind::tee(), 8192, "app_idle", kTee1, 0},
      {kTee2, "tee2", DomainKind::tee(), 8192, "app_idle", kTee2, 0},
      {kSerialIn, "serial_in", DomainKind::io(DeviceKind::SerialIn), 4096, "svc_serial_in",
       kSerialIn, 0},
      {kSerialOut, "serial_out", DomainKind::io(DeviceKind::SerialOut), 4096, "svc_serial_out",
       kSerialOut, 0},
      {kStorage, "storage", DomainKind::io(DeviceKind::Storage), 8192, "svc_storage", kStorage,
       4096},
      {kNetwork, "network", DomainKind::io(DeviceKind::Network), 8192, "svc_network", kNetwork, 0},
      {kUntrusted, "untrusted", DomainKind::untrusted(), 65536, "workload", kUntrusted, 0},
  };
  std::vector<DomainId> clients = {kRm, kTee1, kTee2, kUntrusted};
  std::vector<DomainId> everyone = {kRm,        kTee1,    kTee2,      kSerialIn,
                                    kSerialOut, kNetwork, kUntrusted};
  m.mailboxes = {
      make_mb(mb::kSerialIn, kSerialIn, FixedRole::FixedWriter, clients, 4, 64, kRm),
      make_mb(mb::kSerialOut, kSerialOut, FixedRole::FixedReader, clients, 4, 64, kRm),
      make_mb(mb::kStorCtlSend, kStorage, FixedRole::FixedReader, clients, 4, 64, kRm),
      make_mb(mb::kStorCtlRecv, kStorage, FixedRole::FixedWriter, clients, 4, 64, kRm),
      make_mb(mb::kStorDataSend, kStorage, FixedRole::FixedReader, clients, 4, 512, kRm),
      make_mb(mb::kStorDataRecv, kStorage, FixedRole::FixedWriter, everyone, 4, 512, kRm),
      make_mb(mb::kNetCtlSend, kNetwork, FixedRole::FixedReader, clients, 4, 64, kRm),
      make_mb(mb::kNetCtlRecv, kNetwork, FixedRole::FixedWriter, clients, 4, 64, kRm),
      make_mb(mb::kNetDataSend, kNetwork, FixedRole::FixedReader, clients, 4, 512, kRm),
      make_mb(mb::kNetDataRecv, kNetwork, FixedRole::FixedWriter, clients, 4, 512, kRm),
      make_mb(mb::kIpc12, kTee1, FixedRole::FixedWriter, {kRm, kTee2}, 4, 64, kRm),
      make_mb(mb::kIpc21, kTee2, FixedRole::FixedWriter, {kRm, kTee1}, 4, 64, kRm),
  };
  std::uint8_t qid = 0;
  for (DomainId d : everyone) {
    m.queues.push_back({qid++, "tpm-" + std::to_string(d), d, kTpmEndpoint, 4, 512});
  }
  // `everyone` omits the storage domain on the mailbox side; every domain has
  // a tpm queue, so add storage explicitly before the manager channels.
  m.queues.push_back({qid++, "tpm-" + std::to_string(kStorage), kStorage, kTpmEndpoint, 4, 512});
  m.queues.push_back({qid++, "rm-tee1", kRm, kTee1, 4, 64});
  m.queues.push_back({qid++, "rm-tee2", kRm, kTee2, 4, 64});
  m.queues.push_back({qid++, "rm-untrusted", kRm, kUntrusted, 4, 64});
  m.arbiters = {{kNetwork, mb::kNetDataRecv, 0x4000, 0x4000}};
  m.images = {{"rmanager", 1024},    {"app_idle", 1024},   {"svc_serial_in", 1024},
              {"svc_serial_out", 1024}, {"svc_storage", 1024}, {"svc_network", 1024},
              {"workload", 1024}};
  return m;
}

MachineManifest insulin_manifest() {
  using namespace dom;
  MachineManifest m = default_manifest();
  m.name = "prototype-insulin";
  m.domains.push_back(
      {kSensor, "sensor", DomainKind::io(DeviceKind::Sensor), 4096, "svc_sensor", kSensor, 0});
  m.domains.push_back(
      {kPump, "pump", DomainKind::io(DeviceKind::Pump), 4096, "svc_pump", kPump, 0});
  std::vector<DomainId> tees = {kRm, kTee1, kTee2};
  m.mailboxes.push_back(make_mb(mb::kSensorSend, kSensor, FixedRole::FixedReader, tees, 4, 64, kRm));
  m.mailboxes.push_back(make_mb(mb::kSensorRecv, kSensor, FixedRole::FixedWriter, tees, 4, 64, kRm));
  m.mailboxes.push_back(make_mb(mb::kPumpSend, kPump, FixedRole::FixedReader, tees, 4, 64, kRm));
  m.mailboxes.push_back(make_mb(mb::kPumpRecv, kPump, FixedRole::FixedWriter, tees, 4, 64, kRm));
  std::uint8_t qid = static_cast<std::uint8_t>(m.queues.size());
  m.queues.push_back({qid++, "tpm-8", kSensor, kTpmEndpoint, 4, 512});
  m.queues.push_back({qid++, "tpm-9", kPump, kTpmEndpoint, 4, 512});
  // storage data plane also feeds the sensor/pump bootloaders
  for (MailboxConfig& mb : m.mailboxes)
    if (mb.id == mb::kStorDataRecv) {
      mb.wired_delegates.push_back(kSensor);
      mb.wired_delegates.push_back(kPump);
    }
  m.images.push_back({"svc_sensor", 1024});
  m.images.push_back({"svc_pump", 1024});
  return m;
}

std::string MachineManifest::to_json() const {
  Json j;
  j["name"] = name;
  j["domains"] = Json::array();
  for (const DomainDecl& d : domains) {
    Json jd;
    jd["id"] = d.id;
    jd["name"] = d.name;
    jd["kind"] = kind_name(d.kind);
    if (d.kind.tag == DomainKindTag::Io) jd["device"] = device_name(d.kind.device);
    jd["mem_size"] = d.mem_size;
    jd["image"] = d.image;
    jd["pcr"] = d.pcr;
    if (d.device_blocks) jd["device_blocks"] = d.device_blocks;
    j["domains"].push_back(jd);
  }
  j["mailboxes"] = Json::array();
  for (const MailboxConfig& mbx : mailboxes) {
    Json jm;
    jm["id"] = mbx.id;
    jm["fixed_end"] = mbx.fixed_end;
    jm["fixed_role"] = mbx.fixed_role == FixedRole::FixedReader ? "reader" : "writer";
    jm["delegates"] = mbx.wired_delegates;
    jm["depth"] = mbx.depth;
    jm["msg_size"] = mbx.msg_size;
    j["mailboxes"].push_back(jm);
  }
  j["queues"] = Json::array();
  for (const QueueDecl& q : queues) {
    Json jq;
    jq["id"] = q.id;
    jq["name"] = q.name;
    jq["a"] = q.end_a == kTpmEndpoint ? Json("tpm") : Json(q.end_a);
    jq["b"] = q.end_b == kTpmEndpoint ? Json("tpm") : Json(q.end_b);
    jq["depth"] = q.depth;
    jq["msg_size"] = q.msg_size;
    j["queues"].push_back(jq);
  }
  j["arbiters"] = Json::array();
  for (const ArbiterDecl& a : arbiters) {
    Json ja;
    ja["io_domain"] = a.io_domain;
    ja["data_mailbox"] = a.data_mailbox;
    ja["window"] = {{"base", a.window_base}, {"len", a.window_len}};
    j["arbiters"].push_back(ja);
  }
  j["images"] = Json::array();
  for (const ImageDecl& img : images)
    j["images"].push_back({{"name", img.name}, {"size", img.size}});
  j["policy"] = {{"max_msgs", policy.max_msgs}, {"max_ticks", policy.max_ticks}};
  return j.dump(2);
}

Result<MachineManifest> MachineManifest::from_json(const std::string& text) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return Err::InvalidManifest;
  MachineManifest m;
  try {
    m.name = j.value("name", "machine");
    DomainId rm = 0;
    for (const Json& jd : j.value("domains", Json::array())) {
      DomainDecl d;
      d.id = jd.at("id").get<DomainId>();
      d.name = jd.value("name", "d" + std::to_string(d.id));
      std::string kind = jd.at("kind").get<std::string>();
      if (kind == "resource_manager") {
        d.kind = DomainKind::rm();
        rm = d.id;
      } else if (kind == "tee") {
        d.kind = DomainKind::tee();
      } else if (kind == "untrusted") {
        d.kind = DomainKind::untrusted();
      } else if (kind == "io") {
        DeviceKind dev;
        if (!parse_device(jd.at("device").get<std::string>(), dev)) return Err::InvalidManifest;
        d.kind = DomainKind::io(dev);
      } else {
        return Err::InvalidManifest;
      }
      d.mem_size = jd.value("mem_size", 4096u);
      d.image = jd.at("image").get<std::string>();
      d.pcr = jd.value("pcr", d.id);
      d.device_blocks = jd.value("device_blocks", 0u);
      m.domains.push_back(std::move(d));
    }
    for (const Json& jm : j.value("mailboxes", Json::array())) {
      MailboxConfig c;
      c.id = jm.at("id").get<MailboxId>();
      c.fixed_end = jm.at("fixed_end").get<DomainId>();
      c.fixed_role =
          jm.at("fixed_role").get<std::string>() == "writer" ? FixedRole::FixedWriter
                                                             : FixedRole::FixedReader;
      c.wired_delegates = jm.at("delegates").get<std::vector<DomainId>>();
      c.depth = jm.value("depth", 4u);
      c.msg_size = jm.value("msg_size", 64u);
      c.rm = rm;
      m.mailboxes.push_back(std::move(c));
    }
    for (const Json& jq : j.value("queues", Json::array())) {
      QueueDecl q;
      q.id = jq.at("id").get<std::uint8_t>();
      q.name = jq.value("name", "q" + std::to_string(q.id));
      auto endpoint = [](const Json& v) -> DomainId {
        return v.is_string() ? kTpmEndpoint : v.get<DomainId>();
      };
      q.end_a = endpoint(jq.at("a"));
      q.end_b = endpoint(jq.at("b"));
      q.depth = jq.value("depth", 4u);
      q.msg_size = jq.value("msg_size", 64u);
      m.queues.push_back(std::move(q));
    }
    for (const Json& ja : j.value("arbiters", Json::array())) {
      ArbiterDecl a;
      a.io_domain = ja.at("io_domain").get<DomainId>();
      a.data_mailbox = ja.at("data_mailbox").get<MailboxId>();
      a.window_base = ja.at("window").at("base").get<std::uint32_t>();
      a.window_len = ja.at("window").at("len").get<std::uint32_t>();
      m.arbiters.push_back(a);
    }
    for (const Json& ji : j.value("images", Json::array())) {
      ImageDecl img;
      img.name = ji.at("name").get<std::string>();
      img.size = ji.value("size", 1024u);
      m.images.push_back(std::move(img));
    }
    if (j.contains("policy")) {
      m.policy.max_msgs = j["policy"].value("max_msgs", 65536u);
      m.policy.max_ticks = j["policy"].value("max_ticks", 10000u);
    }
  } catch (const Json::exception&) {
    return Err::InvalidManifest;
  }
  return m;
}

}  // namespace splitsim
