#include "splitsim/scenario.hpp"

#include <algorithm>

#include "json.hpp"

#include "splitsim/proto.hpp"
#include "splitsim/resource_manager.hpp"
#include "splitsim/services.hpp"
#include "splitsim/tee_runtime.hpp"
#include "splitsim/workload.hpp"

namespace splitsim {

namespace {

using Json = nlohmann::ordered_json;

Nonce derive_nonce(std::uint64_t seed, std::uint32_t index) {
  ByteWriter w;
  w.u64(seed);
  w.u32(index);
  Digest d = sha256(w.view());
  Nonce n{};
  std::copy(d.begin(), d.begin() + kNonceLen, n.begin());
  return n;
}

void add_check(ScenarioResult& r, std::string name, bool pass, std::string detail = {}) {
  r.checks.push_back({std::move(name), pass, std::move(detail)});
}

struct Trigger {
  std::string when;
  std::function<void(Machine&)> fire;
  bool fired = false;
};

void run_with_triggers(Machine& m, std::vector<Trigger>& triggers, const std::string& done_tag,
                       std::uint64_t max_ticks) {
  for (std::uint64_t i = 0; i < max_ticks; ++i) {
    if (m.note_tick(done_tag)) return;
    m.step(1);
    for (Trigger& t : triggers)
      if (!t.fired && m.note_tick(t.when)) {
        t.fired = true;
        t.fire(m);
      }
  }
}

TeeRtConfig runtime_config(Machine& m) {
  TeeRtConfig cfg;
  cfg.device_key = m.device_key();
  for (const DomainDecl& d : m.manifest().domains)
    cfg.service_image_digest[d.id] = m.image_digest(d.image);
  return cfg;
}

std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string::npos;
       pos = hay.find(needle, pos + needle.size()))
    ++n;
  return n;
}

// ---------------------------------------------------------------------------
// The scripted bank verifier on the far side of the emulated link.

namespace bank {
constexpr std::uint8_t kHello = 1;
constexpr std::uint8_t kChallenge = 2;
constexpr std::uint8_t kQuote = 3;
constexpr std::uint8_t kAuthOk = 4;
constexpr std::uint8_t kAuthFail = 5;
constexpr std::uint8_t kReq = 6;
constexpr std::uint8_t kResp = 7;

Key session_key(const Key& bank_key, const Nonce& nonce) {
  ByteWriter w;
  w.bytes(nonce);
  return hmac_sha256(bank_key, w.view());
}

Mac token(const Key& bank_key, const Nonce& nonce) {
  ByteWriter w;
  w.bytes(nonce);
  w.bytes(to_bytes("token"));
  return hmac_sha256(bank_key, w.view());
}
}  // namespace bank

struct BankPeerState {
  Key bank_key{};
  Key device_key{};
  Digest expected_pcr{};
  std::string expected_credential;
  std::uint64_t seed = 1;
  NetReassembly rx;
  Nonce challenge{};
  bool challenged = false;
  bool authed = false;
  std::vector<std::string> log;
};

LinkPeer make_bank_peer(std::shared_ptr<BankPeerState> st) {
  return [st](const Bytes& fragment) -> std::vector<Bytes> {
    std::vector<Bytes> out;
    if (!st->rx.feed(fragment) || !st->rx.complete) return out;
    Bytes msg = std::move(st->rx.data);
    st->rx = NetReassembly{};
    if (msg.empty()) return out;
    Bytes reply;
    switch (msg[0]) {
      case bank::kHello: {
        std::string cred(msg.begin() + 1, msg.end());
        st->log.push_back("hello");
        if (cred != st->expected_credential) {
          st->log.push_back("bad-credential");
          reply = {bank::kAuthFail};
          break;
        }
        st->challenge = derive_nonce(st->seed, 0xbac);
        st->challenged = true;
        reply.push_back(bank::kChallenge);
        reply.insert(reply.end(), st->challenge.begin(), st->challenge.end());
        break;
      }
      case bank::kQuote: {
        Result<Quote> q = Quote::deserialize(
            std::span<const std::uint8_t>(msg).subspan(1));
        if (!st->challenged || !q.ok()) {
          reply = {bank::kAuthFail};
          break;
        }
        QuoteVerdict v =
            verify_quote(q.value(), {st->expected_pcr}, st->challenge, st->device_key);
        st->log.push_back(std::string("verify:") + std::string(quote_verdict_name(v)));
        if (v != QuoteVerdict::Accept) {
          reply = {bank::kAuthFail};
          break;
        }
        st->authed = true;
        Mac tok = bank::token(st->bank_key, st->challenge);
        reply.push_back(bank::kAuthOk);
        reply.insert(reply.end(), tok.begin(), tok.end());
        break;
      }
      case bank::kReq: {
        if (!st->authed) {
          reply = {bank::kAuthFail};
          break;
        }
        Key k = bank::session_key(st->bank_key, st->challenge);
        Nonce n = derive_nonce(st->seed, 77);
        Result<Bytes> open =
            ae_open(k, n, std::span<const std::uint8_t>(msg).subspan(1));
        if (!open.ok() || to_string(open.value()) != "balance?") {
          reply = {bank::kAuthFail};
          break;
        }
        Nonce n2 = derive_nonce(st->seed, 78);
        Bytes sealed = ae_seal(k, n2, to_bytes("balance=4200"));
        reply.push_back(bank::kResp);
        reply.insert(reply.end(), sealed.begin(), sealed.end());
        st->log.push_back("served-balance");
        break;
      }
      default:
        reply = {bank::kAuthFail};
    }
    for (Bytes& frag : net_fragment(reply, kMaxPayload512)) out.push_back(std::move(frag));
    return out;
  };
}

// ---------------------------------------------------------------------------
// The banking program: exclusive UI with the pre-shared secret, attested
// network exchange, clean session teardown.

struct BankingCfg {
  TeeRtConfig rt;
  std::string secret;
  Key bank_key{};
  std::uint64_t seed = 1;
  DomainId serial_out = 0, serial_in = 0, network = 0;
};

Task<void> banking_program(DomainCtx ctx, BankingCfg cfg) {
  TeeRuntime rt(ctx, cfg.rt);
  if (!co_await rt.wait_start()) co_return;
  ctx.note("phase_launch");

  auto fail = [&](std::string why) {
    ctx.note("bank_fail", {{"why", std::move(why)}});
  };

  Result<TeeSession> out =
      co_await rt.request_and_verify(cfg.serial_out, {16, 4000}, derive_nonce(cfg.seed, 1));
  if (!out.ok()) { fail(std::string(err_name(out.error()))); co_return; }
  Result<TeeSession> in =
      co_await rt.request_and_verify(cfg.serial_in, {16, 4000}, derive_nonce(cfg.seed, 2));
  if (!in.ok()) { fail(std::string(err_name(in.error()))); co_return; }
  ctx.note("ui_active");

  // the pre-shared secret proves to the user that this program holds the UI
  if (co_await rt.print(out.value(), "SECRET:" + cfg.secret + "\n") != Err::Ok) {
    fail("print");
    co_return;
  }
  Result<std::string> cred = co_await rt.readline(in.value(), 2000);
  if (!cred.ok()) { fail("no-credential"); co_return; }

  Result<TeeSession> net =
      co_await rt.request_and_verify(cfg.network, {std::nullopt, 4000}, derive_nonce(cfg.seed, 3));
  if (!net.ok()) { fail(std::string(err_name(net.error()))); co_return; }
  ctx.note("phase_io");

  Bytes hello;
  hello.push_back(bank::kHello);
  Bytes cred_b = to_bytes(cred.value());
  hello.insert(hello.end(), cred_b.begin(), cred_b.end());
  if (co_await rt.net_send(net.value(), std::move(hello)) != Err::Ok) { fail("net"); co_return; }

  Result<Bytes> chal = co_await rt.net_recv(net.value(), 2000);
  if (!chal.ok() || chal.value().empty() || chal.value()[0] != bank::kChallenge) {
    fail("challenge");
    co_return;
  }
  Nonce nonce{};
  std::copy(chal.value().begin() + 1, chal.value().begin() + 1 + kNonceLen, nonce.begin());

  Result<Quote> quote = co_await rt.attest(nonce);
  if (!quote.ok()) { fail("attest"); co_return; }
  Bytes qmsg;
  qmsg.push_back(bank::kQuote);
  Bytes ser = quote.value().serialize();
  qmsg.insert(qmsg.end(), ser.begin(), ser.end());
  if (co_await rt.net_send(net.value(), std::move(qmsg)) != Err::Ok) { fail("net"); co_return; }

  Result<Bytes> auth = co_await rt.net_recv(net.value(), 2000);
  if (!auth.ok() || auth.value().empty()) { fail("auth"); co_return; }
  if (auth.value()[0] != bank::kAuthOk) {
    ctx.note("bank_reject");
    co_await rt.print(out.value(), "bank rejected this device\n");
    co_await rt.end_session(net.value());
    co_await rt.end_session(in.value());
    co_await rt.end_session(out.value());
    ctx.note("scenario_done");
    co_return;
  }
  Mac expect_tok = bank::token(cfg.bank_key, nonce);
  if (auth.value().size() != 1 + kMacLen ||
      !constant_time_eq(std::span<const std::uint8_t>(auth.value()).subspan(1), expect_tok)) {
    fail("token");
    co_return;
  }
  ctx.note("bank_auth_ok");

  Key k = bank::session_key(cfg.bank_key, nonce);
  Bytes req;
  req.push_back(bank::kReq);
  Bytes sealed = ae_seal(k, derive_nonce(cfg.seed, 77), to_bytes("balance?"));
  req.insert(req.end(), sealed.begin(), sealed.end());
  if (co_await rt.net_send(net.value(), std::move(req)) != Err::Ok) { fail("net"); co_return; }
  Result<Bytes> resp = co_await rt.net_recv(net.value(), 2000);
  if (!resp.ok() || resp.value().empty() || resp.value()[0] != bank::kResp) {
    fail("resp");
    co_return;
  }
  Result<Bytes> balance = ae_open(k, derive_nonce(cfg.seed, 78),
                                  std::span<const std::uint8_t>(resp.value()).subspan(1));
  if (!balance.ok()) { fail("open"); co_return; }
  ctx.note("bank_balance", {{"text", to_string(balance.value())}});
  co_await rt.print(out.value(), to_string(balance.value()) + "\n");

  co_await rt.end_session(net.value());
  co_await rt.end_session(in.value());
  ctx.note("ui_done");

  ctx.note("phase_compute");
  co_await ctx.spin(20);  // local bookkeeping over the sealed records

  co_await rt.end_session(out.value());
  ctx.note("scenario_done");
}

// ---------------------------------------------------------------------------
// The insulin program: periodic sensor->dose->pump cycles with history
// persisted in its bound storage partition.

struct InsulinCfg {
  TeeRtConfig rt;
  std::uint32_t periods = 5;
  std::uint64_t seed = 1;
  DomainId sensor = 0, pump = 0, storage = 0;
};

Task<void> insulin_program(DomainCtx ctx, InsulinCfg cfg) {
  TeeRuntime rt(ctx, cfg.rt);
  if (!co_await rt.wait_start()) co_return;
  ctx.note("phase_launch");
  std::uint32_t base = client_partition_base(ctx.self());

  for (std::uint32_t p = 1; p <= cfg.periods; ++p) {
    ctx.note("period_" + std::to_string(p));

    Result<TeeSession> sen = co_await rt.request_and_verify(
        cfg.sensor, {8, 3000}, derive_nonce(cfg.seed, 100 + p));
    if (!sen.ok()) { ctx.note("insulin_fail", {{"why", "sensor"}}); co_return; }
    Result<std::uint32_t> glucose = co_await rt.sensor_sample(sen.value());
    if (!glucose.ok()) { ctx.note("insulin_fail", {{"why", "sample"}}); co_return; }
    co_await rt.end_session(sen.value());

    std::uint32_t dose = insulin_dose(glucose.value());
    Result<TeeSession> pmp = co_await rt.request_and_verify(
        cfg.pump, {8, 3000}, derive_nonce(cfg.seed, 200 + p));
    if (!pmp.ok()) { ctx.note("insulin_fail", {{"why", "pump"}}); co_return; }
    ctx.note("dosing_" + std::to_string(p));
    co_await ctx.spin(6);  // the dosing window the hijack attempts aim for
    Result<std::uint32_t> ack = co_await rt.pump_dose(pmp.value(), dose);
    if (!ack.ok() || ack.value() != dose) { ctx.note("insulin_fail", {{"why", "ack"}}); co_return; }
    co_await rt.end_session(pmp.value());
    ctx.note("pump_done_" + std::to_string(p));

    Result<TeeSession> sto = co_await rt.request_and_verify(
        cfg.storage, {std::nullopt, 3000}, derive_nonce(cfg.seed, 300 + p));
    if (!sto.ok()) { ctx.note("insulin_fail", {{"why", "storage"}}); co_return; }
    ByteWriter rec;
    rec.u32(p);
    rec.u32(glucose.value());
    rec.u32(dose);
    Bytes block(kBlockSize, 0);
    std::copy(rec.view().begin(), rec.view().end(), block.begin());
    if (co_await rt.storage_write(sto.value(), base + p - 1, std::move(block)) != Err::Ok) {
      ctx.note("insulin_fail", {{"why", "persist"}});
      co_return;
    }
    // history so far must read back intact
    Result<Bytes> hist = co_await rt.storage_read(sto.value(), base,
                                                  static_cast<std::uint16_t>(p));
    bool ok = hist.ok();
    if (ok) {
      for (std::uint32_t i = 0; i < p; ++i) {
        ByteReader rr(std::span<const std::uint8_t>(hist.value())
                          .subspan(static_cast<std::size_t>(i) * kBlockSize, 12));
        if (rr.u32() != i + 1) ok = false;
        rr.u32();
        rr.u32();
      }
    }
    if (!ok) { ctx.note("insulin_fail", {{"why", "history"}}); co_return; }
    ctx.note("history_ok", {{"n", static_cast<std::uint64_t>(p)}});
    co_await rt.end_session(sto.value());
  }
  ctx.note("scenario_done");
}

// ---------------------------------------------------------------------------
// Contention holder: claims storage for a fixed time quota and holds it until
// expiry, never yielding.

struct HolderCfg {
  TeeRtConfig rt;
  DomainId storage = 0;
  std::uint32_t hold_ticks = 50;
  std::uint32_t sessions = 1;
  std::uint64_t seed = 1;
};

Task<void> holder_program(DomainCtx ctx, HolderCfg cfg) {
  for (std::uint32_t s = 1; s <= cfg.sessions; ++s) {
    while (!ctx.machine().note_tick("go_tee_" + std::to_string(s))) co_await ctx.spin(1);
    TeeRuntime rt(ctx, cfg.rt);
    Result<TeeSession> sto = co_await rt.request_and_verify(
        cfg.storage, {std::nullopt, cfg.hold_ticks}, derive_nonce(cfg.seed, 900 + s));
    if (!sto.ok()) {
      ctx.note("holder_fail", {{"why", std::string(err_name(sto.error()))}});
      co_return;
    }
    ctx.note("holder_active_" + std::to_string(s));
    std::uint32_t base = client_partition_base(ctx.self());
    for (;;) {
      Result<Bytes> r = co_await rt.storage_read(sto.value(), base, 1);
      if (!r.ok() && r.error() != Err::QueueEmpty) break;  // quota expired under us
      if (ctx.now() + 4 >= sto.value().deadline) {
        while (ctx.now() < sto.value().deadline) co_await ctx.spin(1);
        break;
      }
    }
    ctx.note("holder_done_" + std::to_string(s));
  }
  ctx.note("scenario_done");
}

// ---------------------------------------------------------------------------

struct Assembled {
  std::unique_ptr<Machine> m;
};

Result<std::unique_ptr<Machine>> assemble(MachineManifest manifest, const ScenarioOptions& opts,
                                          RmConfig rm_cfg) {
  Machine::BuildOpts build;
  if (opts.inject.count("tamper-image")) {
    for (const DomainDecl& d : manifest.domains)
      if (d.kind.tag == DomainKindTag::Tee && d.image.rfind("app_", 0) == 0)
        build.tampered_images.insert(d.image);
  }
  auto r = Machine::build(manifest, build);
  if (!r.ok()) return r.error();
  std::unique_ptr<Machine> m = r.take();
  register_default_services(*m);
  register_resource_manager(*m, rm_cfg);
  register_workload(*m);
  if (opts.inject.count("link-down")) m->link().down = true;
  return m;
}

void finish(ScenarioResult& r, Machine& m) {
  r.trace_jsonl = m.trace().to_jsonl();
  r.pass = true;
  for (const CheckResult& c : r.checks)
    if (!c.pass) r.pass = false;
}

void add_phase_metrics(ScenarioResult& r, Machine& m) {
  std::optional<Tick> launch = m.note_tick("phase_launch");
  std::optional<Tick> io = m.note_tick("phase_io");
  std::optional<Tick> compute = m.note_tick("phase_compute");
  std::optional<Tick> done = m.note_tick("scenario_done");
  if (launch && io) r.metrics.emplace_back("launch_ticks", *io - *launch);
  if (io && compute) r.metrics.emplace_back("io_ticks", *compute - *io);
  if (compute && done) r.metrics.emplace_back("compute_ticks", *done - *compute);
}

}  // namespace

std::uint32_t insulin_dose(std::uint32_t glucose) {
  if (glucose <= 100) return 0;
  std::uint32_t d = (glucose - 100) / 2;
  return d > 40 ? 40 : d;
}

// ---------------------------------------------------------------------------

ScenarioResult run_boot(const ScenarioOptions& opts) {
  ScenarioResult r;
  r.name = "boot";
  MachineManifest manifest = opts.manifest ? *opts.manifest : default_manifest();
  auto built = assemble(manifest, opts, RmConfig{});
  if (!built.ok()) {
    add_check(r, "build", false, Machine::last_build_error());
    return r;
  }
  std::unique_ptr<Machine> m = built.take();
  std::optional<Tick> done = m->step_until_note("boot_complete", opts.max_ticks);
  add_check(r, "boot-complete", done.has_value());

  auto boots = m->trace().all("bootload");
  const DomainDecl* stor = manifest.find_by_device(DeviceKind::Storage);
  bool order_ok = boots.size() == manifest.domains.size() && stor &&
                  boots[0]->domain == stor->id && boots[1]->domain == manifest.rm_id();
  for (std::size_t i = 2; i < boots.size(); ++i)
    if (boots[i]->tick < boots[1]->tick) order_ok = false;
  add_check(r, "boot-order", order_ok,
            "storage first, manager second, remaining domains after");

  bool pcr_ok = !boots.empty();
  for (const TraceEvent* e : boots) {
    Digest expect = boot_pcr(m->image_digest(*e->str("image")));
    if (*e->str("pcr") != hex_encode(expect)) pcr_ok = false;
  }
  add_check(r, "boot-measurements", pcr_ok, "pcr = H(0^32 || H(image)) for every domain");
  if (done) r.metrics.emplace_back("boot_ticks", *done);
  finish(r, *m);
  return r;
}

ScenarioResult run_banking(const ScenarioOptions& opts) {
  ScenarioResult r;
  r.name = "banking";
  MachineManifest manifest = opts.manifest ? *opts.manifest : default_manifest();
  for (DomainDecl& d : manifest.domains)
    if (d.id == dom::kTee1) d.image = "app_banking";
  manifest.images.push_back({"app_banking", 1200});

  const DomainDecl* sout = manifest.find_by_device(DeviceKind::SerialOut);
  const DomainDecl* sin = manifest.find_by_device(DeviceKind::SerialIn);
  const DomainDecl* net = manifest.find_by_device(DeviceKind::Network);
  bool attacks = !opts.inject.count("no-attacks");

  RmConfig rm_cfg;
  rm_cfg.inject_stale_frame = opts.inject.count("stale-frame") > 0;
  rm_cfg.inject_seed = opts.seed;
  rm_cfg.undercut_msgs = opts.inject.count("undercut") > 0;
  if (attacks) {
    rm_cfg.hostile_resets.push_back({"ui_active", sout->id});
    rm_cfg.skip_reset_for.insert(manifest.untrusted_id());
  }

  auto built = assemble(manifest, opts, rm_cfg);
  if (!built.ok()) {
    add_check(r, "build", false, Machine::last_build_error());
    return r;
  }
  std::unique_ptr<Machine> m = built.take();

  auto peer_state = std::make_shared<BankPeerState>();
  peer_state->bank_key = derive_key("bank-key:" + std::to_string(opts.seed));
  peer_state->device_key = m->device_key();
  peer_state->expected_pcr = boot_pcr(m->image_digest("app_banking"));
  peer_state->expected_credential = "credential-12345";
  peer_state->seed = opts.seed;
  m->link().peer = make_bank_peer(peer_state);

  BankingCfg app;
  app.rt = runtime_config(*m);
  app.secret = opts.ui_secret;
  app.bank_key = peer_state->bank_key;
  app.seed = opts.seed;
  app.serial_out = sout->id;
  app.serial_in = sin->id;
  app.network = net->id;
  m->register_program("app_banking",
                      [app](DomainCtx ctx) { return banking_program(ctx, app); });

  std::vector<Trigger> triggers;
  triggers.push_back({"boot_complete", [](Machine& mm) {
                        mm.inject_line(mm.now() + 2, "run banking");
                      }});
  triggers.push_back({"ui_active", [&, attacks](Machine& mm) {
                        mm.inject_line(mm.now() + 4, "credential-12345");
                        if (!attacks) return;
                        mm.push_stimulus(mm.untrusted(),
                                         "rogue_write " + std::to_string(mb::kSerialOut));
                        mm.push_stimulus(mm.untrusted(),
                                         "rogue_read " + std::to_string(mb::kSerialIn));
                        mm.push_stimulus(mm.untrusted(),
                                         "snoop_status " + std::to_string(mb::kSerialOut));
                      }});
  if (attacks)
    triggers.push_back({"ui_done", [sout](Machine& mm) {
                          mm.push_stimulus(mm.untrusted(),
                                           "poke_device " + std::to_string(sout->id));
                        }});

  run_with_triggers(*m, triggers, "scenario_done", opts.max_ticks);
  // allow the late stale-reuse attack to land after the program finished,
  // then give the disabled service and the shell time to react
  if (attacks && m->note_tick("scenario_done")) {
    for (int i = 0; i < 4000 && !m->note_tick("attack_stale"); ++i) m->step(1);
    m->step(300);
  }

  if (opts.inject.count("stale-frame")) {
    const TraceEvent* v = m->trace().first("tee_verify");
    add_check(r, "stale-detected", v && v->str("outcome") == "stale-domain",
              "request_and_verify flags the pre-used domain");
    finish(r, *m);
    return r;
  }
  if (opts.inject.count("undercut")) {
    bool mismatch = false;
    for (const TraceEvent* v : m->trace().all("tee_verify"))
      if (v->str("outcome") == "status-mismatch") mismatch = true;
    add_check(r, "undercut-detected", mismatch, "hardware status contradicts the grant");
    finish(r, *m);
    return r;
  }
  if (opts.inject.count("tamper-image")) {
    add_check(r, "tamper-rejected", m->note_tick("bank_reject").has_value(),
              "the verifier refuses the mismeasured program");
    finish(r, *m);
    return r;
  }

  add_check(r, "completed", m->note_tick("scenario_done").has_value());
  bool all_verified = true;
  for (const TraceEvent* v : m->trace().all("tee_verify"))
    if (v->str("outcome") != "verified") all_verified = false;
  add_check(r, "sessions-verified", all_verified && !m->trace().all("tee_verify").empty());
  add_check(r, "secret-once",
            count_occurrences(m->terminal().sink, "SECRET:" + opts.ui_secret) == 1,
            "the pre-shared secret reached the terminal exactly once");
  add_check(r, "bank-attested", m->note_tick("bank_auth_ok").has_value());
  add_check(r, "bank-exchange", m->note_tick("bank_balance").has_value() &&
                                    count_occurrences(m->terminal().sink, "balance=4200") == 1);

  if (attacks) {
    const TraceEvent* wr = m->trace().first("attack_write");
    add_check(r, "hijack-write-denied", wr && wr->str("result") == "no-access");
    const TraceEvent* rd = m->trace().first("attack_read");
    add_check(r, "rogue-read-denied", rd && rd->str("result") == "no-access");
    const TraceEvent* sn = m->trace().first("attack_snoop");
    add_check(r, "status-snoop-dummy",
              sn && sn->find("dummy") && std::get<bool>(*sn->find("dummy")));
    const TraceEvent* hr = m->trace().first("hostile_reset");
    add_check(r, "reset-attempt-blocked", hr && hr->str("outcome") == "blocked");
    const TraceEvent* stale = m->trace().first("attack_stale");
    bool stale_held = stale && count_occurrences(m->terminal().sink, "stale") == 0 &&
                      m->trace().first("svc_rejected", sout->id) != nullptr;
    add_check(r, "stale-reuse-denied", stale_held,
              "disabled service rejected the re-granted session");
    add_check(r, "hostile-sink-clean",
              count_occurrences(m->terminal().sink, "pwned") == 0);
  }

  // the shell takes the terminal back once the program lets go of it
  if (attacks) {
    const TraceEvent* prompt = nullptr;
    std::optional<Tick> done_at = m->note_tick("ui_done");
    for (const TraceEvent* p : m->trace().all("shell_prompt"))
      if (done_at && p->tick > *done_at && !prompt) prompt = p;
    add_check(r, "shell-prompt-returns", prompt != nullptr);
  }

  // disable precedes yield on the clean teardown
  const TraceEvent* disabled = m->trace().first("svc_disabled", sout->id);
  bool order = false;
  if (disabled)
    for (const TraceEvent* y : m->trace().all("yield", dom::kTee1))
      if (y->mailbox == mb::kSerialOut && y->tick >= disabled->tick) order = true;
  add_check(r, "disable-before-yield", order);

  add_phase_metrics(r, *m);
  finish(r, *m);
  return r;
}

ScenarioResult run_insulin(const ScenarioOptions& opts) {
  ScenarioResult r;
  r.name = "insulin";
  MachineManifest manifest = opts.manifest ? *opts.manifest : insulin_manifest();
  for (DomainDecl& d : manifest.domains)
    if (d.id == dom::kTee1) d.image = "app_insulin";
  manifest.images.push_back({"app_insulin", 1400});
  // the stale-reuse attack needs the untrusted domain wired to the pump
  for (MailboxConfig& c : manifest.mailboxes)
    if (c.fixed_end == dom::kPump && !c.wired(manifest.untrusted_id()))
      c.wired_delegates.push_back(manifest.untrusted_id());

  const DomainDecl* sensor = manifest.find_by_device(DeviceKind::Sensor);
  const DomainDecl* pump = manifest.find_by_device(DeviceKind::Pump);
  const DomainDecl* stor = manifest.find_by_device(DeviceKind::Storage);
  bool attacks = !opts.inject.count("no-attacks");

  RmConfig rm_cfg;
  rm_cfg.inject_seed = opts.seed;
  if (attacks) {
    rm_cfg.hostile_resets.push_back({"dosing_1", pump->id});
    rm_cfg.skip_reset_for.insert(manifest.untrusted_id());
  }

  auto built = assemble(manifest, opts, rm_cfg);
  if (!built.ok()) {
    add_check(r, "build", false, Machine::last_build_error());
    return r;
  }
  std::unique_ptr<Machine> m = built.take();
  m->sensor().values = opts.glucose;

  InsulinCfg app;
  app.rt = runtime_config(*m);
  app.periods = opts.periods;
  app.seed = opts.seed;
  app.sensor = sensor->id;
  app.pump = pump->id;
  app.storage = stor->id;
  m->register_program("app_insulin",
                      [app](DomainCtx ctx) { return insulin_program(ctx, app); });

  std::vector<Trigger> triggers;
  triggers.push_back({"boot_complete", [](Machine& mm) {
                        mm.inject_line(mm.now() + 2, "run insulin");
                      }});
  if (attacks) {
    triggers.push_back({"dosing_1", [pump, sensor](Machine& mm) {
                          mm.push_stimulus(mm.untrusted(),
                                           "rogue_write " + std::to_string(mb::kPumpSend));
                          mm.push_stimulus(mm.untrusted(),
                                           "snoop_status " + std::to_string(mb::kPumpSend));
                          mm.push_stimulus(mm.untrusted(),
                                           "rogue_read " + std::to_string(mb::kSensorRecv));
                          (void)pump;
                          (void)sensor;
                        }});
    triggers.push_back({"pump_done_1", [pump](Machine& mm) {
                          mm.push_stimulus(mm.untrusted(),
                                           "poke_device " + std::to_string(pump->id));
                        }});
    triggers.push_back({"period_3", [](Machine& mm) {
                          // read inside the program's partition with the wrong
                          // credential, then outside our own with the right one
                          mm.push_stimulus(mm.untrusted(),
                                           "storage_intrude " +
                                               std::to_string(client_partition_base(dom::kTee1)) +
                                               " 1");
                        }});
  }

  run_with_triggers(*m, triggers, "scenario_done", opts.max_ticks);
  if (attacks && m->note_tick("scenario_done")) {
    for (int i = 0; i < 4000 && !m->note_tick("attack_stale"); ++i) m->step(1);
    m->step(300);
  }

  add_check(r, "completed", m->note_tick("scenario_done").has_value() &&
                                !m->note_tick("insulin_fail").has_value());

  std::vector<std::uint32_t> expect_doses;
  for (std::uint32_t i = 0; i < opts.periods; ++i)
    expect_doses.push_back(
        insulin_dose(i < opts.glucose.size() ? opts.glucose[i] : 120));
  add_check(r, "doses-delivered", m->pump_log() == expect_doses);

  // history persisted across sessions, straight from the device
  bool history_ok = m->note_tick("history_ok").has_value();
  std::uint32_t base = client_partition_base(dom::kTee1);
  for (std::uint32_t p = 1; p <= opts.periods && history_ok; ++p) {
    std::size_t off = static_cast<std::size_t>(base + p - 1) * kBlockSize;
    if (off + 12 > m->storage().blocks.size()) {
      history_ok = false;
      break;
    }
    ByteReader rr(std::span<const std::uint8_t>(m->storage().blocks).subspan(off, 12));
    if (rr.u32() != p) history_ok = false;
    if (rr.u32() != (p - 1 < opts.glucose.size() ? opts.glucose[p - 1] : 120)) history_ok = false;
    if (rr.u32() != expect_doses[p - 1]) history_ok = false;
  }
  add_check(r, "history-persisted", history_ok,
            std::to_string(opts.periods) + " records intact after the final session");

  bool all_verified = true;
  for (const TraceEvent* v : m->trace().all("tee_verify"))
    if (v->str("outcome") != "verified") all_verified = false;
  add_check(r, "sessions-verified", all_verified);

  if (attacks) {
    const TraceEvent* wr = m->trace().first("attack_write");
    add_check(r, "pump-hijack-denied", wr && wr->str("result") == "no-access");
    const TraceEvent* rd = m->trace().first("attack_read");
    add_check(r, "rogue-read-denied", rd && rd->str("result") == "no-access");
    const TraceEvent* sn = m->trace().first("attack_snoop");
    add_check(r, "status-snoop-dummy",
              sn && sn->find("dummy") && std::get<bool>(*sn->find("dummy")));
    const TraceEvent* hr = m->trace().first("hostile_reset");
    add_check(r, "reset-attempt-blocked", hr && hr->str("outcome") == "blocked",
              "dosing session is irrevocable");
    const TraceEvent* stale = m->trace().first("attack_stale");
    add_check(r, "stale-reuse-denied", stale && stale->str("result") == "service-disabled");
    bool dose_log_clean = true;
    for (std::uint32_t d : m->pump_log())
      if (d == 1) dose_log_clean = false;  // the poke dose never reaches the pump
    add_check(r, "pump-log-clean", dose_log_clean);
    bool intrude_denied = false;
    for (const TraceEvent* e : m->trace().all("compat_storage_denied"))
      if (e->str("why") == "out-of-partition") intrude_denied = true;
    const TraceEvent* bad_auth = m->trace().first("compat_intrude_auth");
    add_check(r, "partition-confined",
              intrude_denied && bad_auth && bad_auth->find("accepted") &&
                  !std::get<bool>(*bad_auth->find("accepted")),
              "wrong credential refused, right credential confined");
  }

  add_phase_metrics(r, *m);
  finish(r, *m);
  return r;
}

ScenarioResult run_contention(const ScenarioOptions& opts) {
  ScenarioResult r;
  r.name = "contention";
  MachineManifest manifest = opts.manifest ? *opts.manifest : default_manifest();
  for (DomainDecl& d : manifest.domains)
    if (d.id == dom::kTee1) d.image = "app_holder";
  manifest.images.push_back({"app_holder", 1024});
  const DomainDecl* stor = manifest.find_by_device(DeviceKind::Storage);
  std::uint32_t k = opts.contention_k;

  auto built = assemble(manifest, opts, RmConfig{.shell = false});
  if (!built.ok()) {
    add_check(r, "build", false, Machine::last_build_error());
    return r;
  }
  std::unique_ptr<Machine> m = built.take();

  HolderCfg app;
  app.rt = runtime_config(*m);
  app.storage = stor->id;
  app.hold_ticks = k;
  app.sessions = k > 0 ? opts.contention_sessions : 0;
  app.seed = opts.seed;
  m->register_program("app_holder", [app](DomainCtx ctx) { return holder_program(ctx, app); });

  std::vector<Trigger> triggers;
  triggers.push_back({"boot_complete", [](Machine& mm) {
                        mm.push_stimulus(mm.untrusted(),
                                         "storage_stream 200 " +
                                             std::to_string(client_partition_base(mm.untrusted())));
                      }});
  if (k > 0)
    triggers.push_back({"compat_read", [](Machine& mm) {
                          mm.record_note(mm.rm(), "go_tee_1", {});
                        }});
  for (std::uint32_t s = 2; s <= opts.contention_sessions; ++s)
    triggers.push_back({"holder_done_" + std::to_string(s - 1), [s](Machine& mm) {
                          mm.record_note(mm.rm(), "go_tee_" + std::to_string(s), {});
                        }});

  std::string done_tag =
      k > 0 ? "holder_done_" + std::to_string(opts.contention_sessions) : "boot_complete";
  run_with_triggers(*m, triggers, done_tag, opts.max_ticks);
  // let the stream re-acquire after the session ends
  Tick resume_budget = m->now() + 2000;
  while (k > 0 && m->now() < resume_budget) {
    bool regranted = false;
    for (const TraceEvent* g : m->trace().all("rm_grant")) {
      if (g->num("requester") == m->untrusted() && g->num("resource") == stor->id &&
          m->note_tick("holder_done_1") && g->tick > *m->note_tick("holder_active_1"))
        regranted = true;
    }
    if (regranted) break;
    m->step(1);
  }
  (void)0;

  if (k == 0) {
    bool no_tee_grant = true;
    for (const TraceEvent* g : m->trace().all("rm_grant"))
      if (g->num("requester") == dom::kTee1) no_tee_grant = false;
    add_check(r, "no-session-no-gap", no_tee_grant);
    r.metrics.emplace_back("gap_ticks", 0);
    finish(r, *m);
    return r;
  }

  // the exclusion windows: from each grant decision to the hardware expiry
  std::vector<const TraceEvent*> tee_grants;
  for (const TraceEvent* g : m->trace().all("rm_grant"))
    if (g->num("requester") == dom::kTee1 && g->num("resource") == stor->id)
      tee_grants.push_back(g);
  add_check(r, "tee-session-granted", tee_grants.size() == opts.contention_sessions,
            std::to_string(tee_grants.size()) + " grants");
  if (tee_grants.empty()) {
    finish(r, *m);
    return r;
  }
  const TraceEvent* tee_grant = tee_grants.front();
  const TraceEvent* expired = nullptr;
  bool fifo_order = true;
  Tick prev_end = 0;
  for (std::size_t i = 0; i < tee_grants.size(); ++i) {
    const TraceEvent* g = tee_grants[i];
    if (g->tick < prev_end) fifo_order = false;
    std::uint64_t deadline = *g->num("deadline");
    const TraceEvent* e = nullptr;
    std::uint64_t dl = *g->num("deadline");
    for (const TraceEvent* x : m->trace().all("expire"))
      if (x->tick == dl && x->str("cause") == "time" && !e) e = x;
    if (i == 0) {
      expired = e;
      add_check(r, "session-expired", e != nullptr && e->tick == deadline,
                "irrevocable session ran to its deadline");
    }
    std::uint64_t gap = e ? e->tick - g->tick : 0;
    std::string key = i == 0 ? "gap_ticks" : "gap_ticks_" + std::to_string(i + 1);
    r.metrics.emplace_back(key, gap);
    add_check(r, i == 0 ? "gap-within-one-tick" : "gap-within-one-tick-" + std::to_string(i + 1),
              gap + 1 >= k && gap <= static_cast<std::uint64_t>(k) + 1,
              "gap " + std::to_string(gap) + " vs K " + std::to_string(k));
    prev_end = e ? e->tick : g->tick;
  }
  if (opts.contention_sessions > 1)
    add_check(r, "gaps-fifo-order", fifo_order, "sessions granted strictly in turn");
  r.metrics.emplace_back("k", k);

  // the streaming reader regains the device only after the session ends
  const TraceEvent* regrant = nullptr;
  for (const TraceEvent* g : m->trace().all("rm_grant"))
    if (g->num("requester") == m->untrusted() && g->num("resource") == stor->id &&
        g->tick >= tee_grant->tick && !regrant)
      regrant = g;
  add_check(r, "stream-resumes-after", regrant && expired && regrant->tick >= expired->tick);
  // and its pending request was queued while the holder owned storage
  const TraceEvent* queued = nullptr;
  for (const TraceEvent* q : m->trace().all("rm_queue"))
    if (q->num("requester") == m->untrusted() && !queued) queued = q;
  add_check(r, "stream-blocked-in-session", queued && expired && queued->tick < expired->tick,
            "blocking covers the session remainder");

  finish(r, *m);
  return r;
}

Result<ScenarioResult> run_scenario(const std::string& name, const ScenarioOptions& opts) {
  if (name == "boot") return run_boot(opts);
  if (name == "banking") return run_banking(opts);
  if (name == "insulin") return run_insulin(opts);
  if (name == "contention") return run_contention(opts);
  return Err::NotFound;
}

// ---------------------------------------------------------------------------

std::string ScenarioResult::to_json() const {
  Json j;
  j["scenario"] = name;
  j["pass"] = pass;
  j["checks"] = Json::array();
  for (const CheckResult& c : checks) {
    Json jc;
    jc["name"] = c.name;
    jc["pass"] = c.pass;
    if (!c.detail.empty()) jc["detail"] = c.detail;
    j["checks"].push_back(jc);
  }
  Json jm = Json::object();
  for (const auto& [k, v] : metrics) jm[k] = v;
  j["metrics"] = jm;
  return j.dump(2);
}

// ---------------------------------------------------------------------------

TcbReport tcb_report(const std::vector<TraceEvent>& trace) {
  TcbReport rep;
  std::optional<DomainId> prog;
  for (const TraceEvent& e : trace)
    if (e.event == "tee_verify" && e.str("outcome") == "verified" && !prog) prog = e.domain;

  TcbReport::Sets cias, ag;
  if (prog) {
    bool used_arbiter = false;
    int restricted_sessions = 0;
    bool any_grant = false;
    for (const TraceEvent& e : trace) {
      if (e.event != "rm_grant" || e.num("requester") != *prog) continue;
      any_grant = true;
      if (e.find("arbiter") && std::get<bool>(*e.find("arbiter"))) used_arbiter = true;
      if (e.find("restricted") && std::get<bool>(*e.find("restricted"))) ++restricted_sessions;
    }
    cias.strong = {"Prog"};
    if (any_grant) {
      cias.strong.push_back("mailbox");
      cias.strong.push_back("reset-guard");
    }
    if (used_arbiter) cias.strong.push_back("arbiter");
    cias.strong.push_back("RoT");
    if (any_grant) cias.weak = {"Proc", "Mem", "I/O", "interconnects"};
    if (restricted_sessions >= 2) {
      ag.strong = cias.strong;
      ag.strong.push_back("RM");
      ag.strong.push_back("SD");
      ag.weak = cias.weak;
    }
  }
  rep.guarantees = {{"C", cias}, {"I", cias}, {"As", cias}, {"Ag", ag}};
  return rep;
}

std::string TcbReport::to_json() const {
  Json j;
  for (const auto& [g, s] : guarantees) {
    j[g] = Json::object();
    j[g]["strong"] = s.strong;
    j[g]["weak"] = s.weak;
  }
  return j.dump(2);
}

std::string TcbReport::to_text() const {
  std::string out;
  for (const auto& [g, s] : guarantees) {
    out += g + ": strong{";
    for (std::size_t i = 0; i < s.strong.size(); ++i)
      out += (i ? ", " : "") + s.strong[i];
    out += "} weak{";
    for (std::size_t i = 0; i < s.weak.size(); ++i) out += (i ? ", " : "") + s.weak[i];
    out += "}\n";
  }
  return out;
}

Result<std::pair<std::string, ScenarioOptions>> parse_scenario_file(const std::string& text) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return Err::BadFrame;
  ScenarioOptions opts;
  std::string name = j.value("scenario", "boot");
  opts.max_ticks = j.value("max_ticks", opts.max_ticks);
  opts.seed = j.value("seed", opts.seed);
  opts.ui_secret = j.value("ui_secret", opts.ui_secret);
  opts.periods = j.value("periods", opts.periods);
  opts.contention_k = j.value("k", opts.contention_k);
  if (j.contains("glucose")) opts.glucose = j["glucose"].get<std::vector<std::uint32_t>>();
  for (const Json& i : j.value("inject", Json::array())) opts.inject.insert(i.get<std::string>());
  if (j.contains("manifest")) {
    Result<MachineManifest> m = MachineManifest::from_json(j["manifest"].dump());
    if (!m.ok()) return Err::InvalidManifest;
    opts.manifest = m.take();
  }
  return std::make_pair(name, opts);
}

}  // namespace splitsim
