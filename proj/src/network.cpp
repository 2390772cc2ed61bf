#include "fedpae/network.hpp"

#include <algorithm>
#include <cstring>
#include <deque>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fedpae::net {

Topology Topology::complete(int n_clients, int64_t link_latency) {
    if (n_clients < 1) throw ConfigError("topology: n_clients must be positive");
    if (link_latency < 1) throw ConfigError("topology: link latency must be >= 1");
    Topology t;
    t.n_clients = n_clients;
    t.adjacency.resize(n_clients);
    t.latency.assign(n_clients, std::vector<int64_t>(n_clients, link_latency));
    for (int i = 0; i < n_clients; ++i)
        for (int j = 0; j < n_clients; ++j)
            if (i != j) t.adjacency[i].push_back(j);
    return t;
}

Topology Topology::without_client(int client) const {
    Topology t = *this;
    if (client < 0 || client >= n_clients) throw InputError("topology: unknown client");
    for (int i = 0; i < n_clients; ++i) {
        auto& adj = t.adjacency[i];
        adj.erase(std::remove(adj.begin(), adj.end(), client), adj.end());
    }
    t.adjacency[client].clear();
    return t;
}

void Topology::validate() const {
    if (n_clients < 1) throw ConfigError("topology: n_clients must be positive");
    if (static_cast<int>(adjacency.size()) != n_clients ||
        static_cast<int>(latency.size()) != n_clients)
        throw ConfigError("topology: adjacency/latency size mismatch");
    for (int i = 0; i < n_clients; ++i) {
        if (static_cast<int>(latency[i].size()) != n_clients)
            throw ConfigError("topology: latency row size mismatch");
        for (int j : adjacency[i]) {
            if (j < 0 || j >= n_clients) throw ConfigError("topology: peer id out of range");
            if (j == i) throw ConfigError("topology: self-loop");
            if (latency[i][j] < 1) throw ConfigError("topology: link latency must be >= 1");
        }
    }
}

// ---- codec ----

namespace {

constexpr char kFrameMagic[4] = {'F', 'P', 'N', '1'};
constexpr size_t kHeaderSize = 4 + 1 + 4 + 4 + 4;

const uint32_t* crc_table() {
    static uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    return table;
}

}  // namespace

uint32_t crc32(std::span<const uint8_t> bytes) {
    const uint32_t* table = crc_table();
    uint32_t c = 0xFFFFFFFFu;
    for (uint8_t b : bytes) c = table[(c ^ b) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

std::vector<uint8_t> encode_message(const Message& m) {
    if (m.payload.size() > 0xFFFFFFFFull) throw InputError("encode_message: payload too large");
    std::vector<uint8_t> out;
    out.reserve(kHeaderSize + m.payload.size() + 4);
    out.insert(out.end(), kFrameMagic, kFrameMagic + 4);
    put_u8(out, static_cast<uint8_t>(m.type));
    put_u32(out, m.sender);
    put_u32(out, m.receiver);
    put_u32(out, static_cast<uint32_t>(m.payload.size()));
    out.insert(out.end(), m.payload.begin(), m.payload.end());
    put_u32(out, crc32({out.data(), out.size()}));
    return out;
}

DecodeResult decode_message(std::span<const uint8_t> bytes) {
    if (bytes.empty()) return {DecodeStatus::incomplete, {}, 0};
    // Magic is checked on however many of its bytes are available, so a junk
    // prefix fails fast instead of waiting for more input.
    size_t magic_avail = std::min<size_t>(bytes.size(), 4);
    if (std::memcmp(bytes.data(), kFrameMagic, magic_avail) != 0)
        throw ProtocolError("decode_message: bad magic");
    if (bytes.size() < kHeaderSize) return {DecodeStatus::incomplete, {}, 0};

    ByteReader r(bytes);
    uint8_t magic[4];
    r.raw(magic, 4);
    uint8_t type = r.u8();
    uint32_t sender = r.u32();
    uint32_t receiver = r.u32();
    uint32_t payload_len = r.u32();

    size_t total = kHeaderSize + static_cast<size_t>(payload_len) + 4;
    if (bytes.size() < total) return {DecodeStatus::incomplete, {}, 0};

    if (type > static_cast<uint8_t>(MessageType::MODEL_REQUEST))
        throw ProtocolError("decode_message: unknown message type");

    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<uint32_t>(bytes[total - 4 + i]) << (8 * i);
    if (crc32(bytes.subspan(0, total - 4)) != stored)
        throw CorruptionError("decode_message: CRC mismatch");

    Message m;
    m.type = static_cast<MessageType>(type);
    m.sender = sender;
    m.receiver = receiver;
    m.payload.assign(bytes.begin() + kHeaderSize, bytes.begin() + (total - 4));
    return {DecodeStatus::ok, std::move(m), total};
}

void FrameReader::feed(std::span<const uint8_t> bytes) {
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Message> FrameReader::next() {
    if (buffer_.empty()) return std::nullopt;
    auto res = decode_message({buffer_.data(), buffer_.size()});
    if (res.status == DecodeStatus::incomplete) return std::nullopt;
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<long>(res.consumed));
    return std::move(res.message);
}

std::vector<uint8_t> encode_model_ref(const selection::ModelId& id) {
    std::vector<uint8_t> out;
    put_u32(out, id.origin_client);
    put_u32(out, id.slot);
    put_u64(out, id.content_hash);
    return out;
}

selection::ModelId decode_model_ref(std::span<const uint8_t> payload) {
    ByteReader r(payload);
    selection::ModelId id;
    id.origin_client = r.u32();
    id.slot = r.u32();
    id.content_hash = r.u64();
    return id;
}

std::vector<uint8_t> encode_predictions_payload(const selection::ModelId& id,
                                                learners::Architecture arch,
                                                const selection::PredictionColumn& column) {
    std::vector<uint8_t> out = encode_model_ref(id);
    put_u8(out, static_cast<uint8_t>(arch));
    put_u32(out, static_cast<uint32_t>(column.size()));
    for (float v : column) put_f32(out, v);
    return out;
}

std::string_view event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::TRAIN_DONE: return "TRAIN_DONE";
        case EventKind::SEND: return "SEND";
        case EventKind::DELIVER: return "DELIVER";
        case EventKind::SELECT: return "SELECT";
        case EventKind::CLIENT_OFFLINE: return "CLIENT_OFFLINE";
    }
    throw InternalError("event_kind_name: unknown kind");
}

std::vector<Event> build_default_schedule(int n_clients, int n_slots, int64_t stagger,
                                          int64_t settle_delay, uint64_t seed) {
    if (stagger < 0) throw InputError("schedule: stagger must be non-negative");
    Rng rng(seed);
    std::vector<Event> schedule;
    std::vector<int64_t> last_train(n_clients, 0);
    for (int c = 0; c < n_clients; ++c) {
        for (int s = 0; s < n_slots; ++s) {
            int64_t t = stagger > 0 ? rng.uniform_int(static_cast<int>(stagger) + 1) : 0;
            last_train[c] = std::max(last_train[c], t);
            schedule.push_back({t, EventKind::TRAIN_DONE, c, s, -1, -1, 0, std::nullopt});
        }
    }
    for (int c = 0; c < n_clients; ++c)
        schedule.push_back(
            {last_train[c] + settle_delay, EventKind::SELECT, c, -1, -1, -1, 0, std::nullopt});
    std::stable_sort(schedule.begin(), schedule.end(),
                     [](const Event& a, const Event& b) { return a.at < b.at; });
    return schedule;
}

// ---- simulator ----

namespace {

struct QueuedEvent {
    int64_t at;
    uint64_t seq;
    Event event;
};

struct QueueOrder {
    bool operator()(const QueuedEvent& a, const QueuedEvent& b) const {
        if (a.at != b.at) return a.at > b.at;
        return a.seq > b.seq;
    }
};

class Simulator {
  public:
    Simulator(const Topology& topology, const std::vector<ClientContext>& contexts,
              const SimOptions& options)
        : topo_(topology), contexts_(contexts), opts_(options) {
        topo_.validate();
        if (static_cast<int>(contexts.size()) != topo_.n_clients)
            throw InputError("simulation: one client context per topology node required");
        const int n = topo_.n_clients;
        result_.benches.resize(n);
        result_.selections.resize(n);
        result_.fetched.resize(n);
        offline_until_.assign(n, -1);
        offline_queue_.resize(n);
        select_count_.assign(n, 0);
        model_bytes_.resize(n);
        model_ids_.resize(n);
        for (int c = 0; c < n; ++c) {
            result_.benches[c].owner = c;
            result_.benches[c].storage_mode = opts_.storage_mode;
            model_bytes_[c].resize(contexts[c].slot_models.size());
            model_ids_[c].resize(contexts[c].slot_models.size());
            for (size_t s = 0; s < contexts[c].slot_models.size(); ++s) {
                model_bytes_[c][s] = learners::serialize_predictor(contexts[c].slot_models[s]);
                std::string_view view(reinterpret_cast<const char*>(model_bytes_[c][s].data()),
                                      model_bytes_[c][s].size());
                model_ids_[c][s] = selection::ModelId{static_cast<uint32_t>(c),
                                                      static_cast<uint32_t>(s), fnv1a64(view)};
            }
        }
    }

    SimResult run(std::vector<Event> schedule) {
        validate_schedule(schedule);
        std::stable_sort(schedule.begin(), schedule.end(),
                         [](const Event& a, const Event& b) { return a.at < b.at; });
        for (auto& e : schedule) push(e.at, std::move(e));

        while (!queue_.empty()) {
            QueuedEvent qe = queue_.top();
            queue_.pop();
            now_ = qe.at;
            dispatch(qe.event);
        }
        for (const auto& q : offline_queue_) result_.queued_at_end += q.size();
        return std::move(result_);
    }

  private:
    void validate_schedule(const std::vector<Event>& schedule) const {
        for (const auto& e : schedule) {
            if (e.at < 0) throw InputError("schedule: negative tick");
            if (e.kind == EventKind::DELIVER)
                throw InputError("schedule: DELIVER events are generated by the simulator");
            auto check_client = [&](int c, const char* what) {
                if (c < 0 || c >= topo_.n_clients)
                    throw InputError(std::string("schedule: unknown client in ") + what);
            };
            switch (e.kind) {
                case EventKind::TRAIN_DONE:
                    check_client(e.client, "TRAIN_DONE");
                    if (e.slot < 0 ||
                        static_cast<size_t>(e.slot) >= contexts_[e.client].slot_models.size())
                        throw InputError("schedule: TRAIN_DONE slot out of range");
                    break;
                case EventKind::SEND:
                    check_client(e.from, "SEND");
                    check_client(e.to, "SEND");
                    if (!e.message.has_value()) check_client(e.client, "SEND");
                    break;
                case EventKind::SELECT:
                    check_client(e.client, "SELECT");
                    break;
                case EventKind::CLIENT_OFFLINE:
                    check_client(e.client, "CLIENT_OFFLINE");
                    if (e.until < e.at) throw InputError("schedule: offline until < at");
                    break;
                default:
                    break;
            }
        }
    }

    void push(int64_t at, Event e) {
        e.at = at;
        queue_.push({at, seq_++, std::move(e)});
    }

    void trace(std::string kind, int client, std::string detail) {
        result_.trace.push_back({now_, std::move(kind), client, std::move(detail)});
    }

    bool offline(int client) const { return offline_until_[client] > now_; }

    void dispatch(const Event& e) {
        switch (e.kind) {
            case EventKind::TRAIN_DONE: on_train_done(e); break;
            case EventKind::SEND: on_send(e); break;
            case EventKind::DELIVER: on_deliver(e); break;
            case EventKind::SELECT: on_select(e); break;
            case EventKind::CLIENT_OFFLINE:
                // until < 0 marks the internal wake-up that flushes the queue.
                if (e.until < 0)
                    on_flush(e.client);
                else
                    on_offline(e);
                break;
        }
    }

    void add_bench_entry(int client, const learners::Predictor& model,
                         const selection::ModelId& id) {
        auto& bench = result_.benches[client];
        for (const auto& entry : bench.entries)
            if (entry.descriptor.id == id) return;  // duplicate delivery

        selection::BenchEntry entry;
        entry.descriptor.id = id;
        entry.descriptor.architecture = model.architecture;
        entry.descriptor.origin_client = id.origin_client;
        entry.descriptor.is_local = id.origin_client == static_cast<uint32_t>(client);
        if (opts_.storage_mode == selection::StorageMode::full_models) {
            entry.model = model;
        } else {
            // Storage-constrained: evaluate on the local validation set now,
            // keep the column, drop the model.
            entry.column = selection::predict_column(model, contexts_[client].val);
        }
        bench.entries.push_back(std::move(entry));
    }

    void on_train_done(const Event& e) {
        const auto& id = model_ids_[e.client][e.slot];
        add_bench_entry(e.client, contexts_[e.client].slot_models[e.slot], id);
        trace("TRAIN_DONE", e.client, "slot=" + std::to_string(e.slot) + " model=" + id.str());
        for (int peer : topo_.adjacency[e.client]) {
            Event send;
            send.kind = EventKind::SEND;
            send.client = e.client;
            send.slot = e.slot;
            send.from = e.client;
            send.to = peer;
            push(now_, std::move(send));
        }
    }

    void on_send(const Event& e) {
        if (e.message.has_value()) {
            // Explicitly scheduled message (requests, prediction transfers).
            Message msg = *e.message;
            msg.sender = static_cast<uint32_t>(e.from);
            msg.receiver = static_cast<uint32_t>(e.to);
            send_message(e.from, e.to, std::move(msg), "scheduled");
            return;
        }
        // Otherwise (client, slot) names the model being shipped.
        if (e.slot < 0 || static_cast<size_t>(e.slot) >= model_ids_[e.client].size())
            throw InputError("SEND: unknown model slot");
        Message msg;
        msg.type = MessageType::MODEL;
        msg.sender = static_cast<uint32_t>(e.from);
        msg.receiver = static_cast<uint32_t>(e.to);
        msg.payload = model_bytes_[e.client][e.slot];
        send_message(e.from, e.to, std::move(msg),
                     "model=" + model_ids_[e.client][e.slot].str());
    }

    void send_message(int from, int to, Message msg, const std::string& what) {
        result_.sends += 1;
        trace("SEND", from, "to=" + std::to_string(to) + " type=" + type_name(msg.type) + " " +
                                what);
        // The wire is exercised for real: encode here, decode on delivery.
        std::vector<uint8_t> frame = encode_message(msg);
        auto decoded = decode_message({frame.data(), frame.size()});
        if (decoded.status != DecodeStatus::ok)
            throw InternalError("send_message: self-encoded frame did not decode");
        Event deliver;
        deliver.kind = EventKind::DELIVER;
        deliver.client = to;
        deliver.from = from;
        deliver.to = to;
        deliver.message = std::move(decoded.message);
        push(now_ + topo_.latency[from][to], std::move(deliver));
    }

    static std::string type_name(MessageType t) {
        switch (t) {
            case MessageType::MODEL: return "MODEL";
            case MessageType::PREDICTIONS: return "PREDICTIONS";
            case MessageType::BENCH_REQUEST: return "BENCH_REQUEST";
            case MessageType::MODEL_REQUEST: return "MODEL_REQUEST";
        }
        return "?";
    }

    void on_deliver(const Event& e) {
        const Message& msg = *e.message;
        if (offline(e.to)) {
            offline_queue_[e.to].push_back(msg);
            trace("QUEUED", e.to, "type=" + type_name(msg.type) + " from=" +
                                      std::to_string(msg.sender));
            return;
        }
        deliver_now(e.to, msg);
    }

    void deliver_now(int client, const Message& msg) {
        result_.delivers += 1;
        trace("DELIVER", client,
              "type=" + type_name(msg.type) + " from=" + std::to_string(msg.sender));
        switch (msg.type) {
            case MessageType::MODEL: {
                auto model = learners::deserialize_predictor(
                    {msg.payload.data(), msg.payload.size()});
                auto id = selection::model_id_of(model);
                bool wanted = pending_fetch_[client].count(id) > 0;
                if (wanted) {
                    result_.fetched[client].emplace(id, model);
                    pending_fetch_[client].erase(id);
                }
                add_bench_entry(client, model, id);
                break;
            }
            case MessageType::MODEL_REQUEST: {
                auto id = decode_model_ref({msg.payload.data(), msg.payload.size()});
                if (id.origin_client == static_cast<uint32_t>(client) &&
                    id.slot < model_ids_[client].size() &&
                    model_ids_[client][id.slot] == id) {
                    Message reply;
                    reply.type = MessageType::MODEL;
                    reply.sender = static_cast<uint32_t>(client);
                    reply.receiver = msg.sender;
                    reply.payload = model_bytes_[client][id.slot];
                    send_message(client, static_cast<int>(msg.sender), std::move(reply),
                                 "model=" + id.str());
                }
                break;
            }
            case MessageType::BENCH_REQUEST: {
                // Reply with every own-trained model currently published.
                for (const auto& entry : result_.benches[client].entries) {
                    if (!entry.descriptor.is_local) continue;
                    uint32_t slot = entry.descriptor.id.slot;
                    Message reply;
                    reply.type = MessageType::MODEL;
                    reply.sender = static_cast<uint32_t>(client);
                    reply.receiver = msg.sender;
                    reply.payload = model_bytes_[client][slot];
                    send_message(client, static_cast<int>(msg.sender), std::move(reply),
                                 "model=" + entry.descriptor.id.str());
                }
                break;
            }
            case MessageType::PREDICTIONS: {
                ByteReader r({msg.payload.data(), msg.payload.size()});
                selection::ModelId id;
                id.origin_client = r.u32();
                id.slot = r.u32();
                id.content_hash = r.u64();
                auto arch = static_cast<learners::Architecture>(r.u8());
                uint32_t count = r.u32();
                size_t expect = contexts_[client].val.size() *
                                static_cast<size_t>(contexts_[client].val.n_classes);
                if (count != expect) {
                    trace("REJECTED", client, "predictions length mismatch for " + id.str());
                    break;
                }
                selection::PredictionColumn col(count);
                for (auto& v : col) v = r.f32();
                auto& bench = result_.benches[client];
                bool dup = false;
                for (const auto& entry : bench.entries) dup |= entry.descriptor.id == id;
                if (!dup) {
                    selection::BenchEntry entry;
                    entry.descriptor.id = id;
                    entry.descriptor.architecture = arch;
                    entry.descriptor.origin_client = id.origin_client;
                    entry.descriptor.is_local =
                        id.origin_client == static_cast<uint32_t>(client);
                    entry.column = std::move(col);
                    bench.entries.push_back(std::move(entry));
                }
                break;
            }
        }
    }

    void on_select(const Event& e) {
        int c = e.client;
        moo::NsgaConfig nsga = opts_.nsga;
        nsga.seed = derive_seed(opts_.seed, "select/" + std::to_string(c) + "/" +
                                                std::to_string(select_count_[c]));
        select_count_[c] += 1;

        auto sel = selection::select_ensemble(result_.benches[c], contexts_[c].val,
                                              opts_.ensemble_k, nsga, opts_.selection);
        trace("SELECT", c,
              "bench=" + std::to_string(result_.benches[c].size()) +
                  " mask=" + moo::mask_to_string(sel.chosen_mask.mask) +
                  " val_acc=" + format_sig(sel.val_accuracy));

        if (opts_.storage_mode == selection::StorageMode::predictions_only &&
            opts_.fetch_chosen_models) {
            // Download only the models needed for inference.
            for (const auto& id : sel.chosen_model_ids) {
                if (id.origin_client == static_cast<uint32_t>(c)) continue;
                if (result_.fetched[c].count(id)) continue;
                pending_fetch_[c].insert(id);
                Message req;
                req.type = MessageType::MODEL_REQUEST;
                req.sender = static_cast<uint32_t>(c);
                req.receiver = id.origin_client;
                req.payload = encode_model_ref(id);
                send_message(c, static_cast<int>(id.origin_client), std::move(req),
                             "model=" + id.str());
            }
        }
        result_.selections[c].push_back({now_, std::move(sel)});
    }

    void on_offline(const Event& e) {
        offline_until_[e.client] = e.until;
        trace("CLIENT_OFFLINE", e.client, "until=" + std::to_string(e.until));
        Event wake;
        wake.kind = EventKind::CLIENT_OFFLINE;
        wake.client = e.client;
        wake.until = -1;
        push(e.until, std::move(wake));
    }

    void on_flush(int client) {
        if (offline(client)) return;  // a later offline window superseded this wake-up
        std::deque<Message> pending;
        pending.swap(offline_queue_[client]);
        trace("ONLINE", client, "flush=" + std::to_string(pending.size()));
        for (auto& msg : pending) deliver_now(client, msg);
    }

    Topology topo_;
    const std::vector<ClientContext>& contexts_;
    SimOptions opts_;
    SimResult result_;
    std::priority_queue<QueuedEvent, std::vector<QueuedEvent>, QueueOrder> queue_;
    uint64_t seq_ = 0;
    int64_t now_ = 0;
    std::vector<int64_t> offline_until_;
    std::vector<std::deque<Message>> offline_queue_;
    std::vector<int> select_count_;
    std::vector<std::vector<std::vector<uint8_t>>> model_bytes_;
    std::vector<std::vector<selection::ModelId>> model_ids_;
    std::map<int, std::set<selection::ModelId>> pending_fetch_;
};

}  // namespace

SimResult run_simulation(const Topology& topology, std::vector<Event> schedule,
                         const std::vector<ClientContext>& contexts, const SimOptions& options) {
    Simulator sim(topology, contexts, options);
    return sim.run(std::move(schedule));
}

std::string trace_to_jsonl(const std::vector<TraceRecord>& trace) {
    std::ostringstream out;
    for (const auto& r : trace) {
        nlohmann::ordered_json j;
        j["t"] = r.t;
        j["kind"] = r.kind;
        j["client"] = r.client;
        j["detail"] = r.detail;
        out << j.dump() << "\n";
    }
    return out.str();
}

void write_trace_jsonl(const std::vector<TraceRecord>& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("write_trace_jsonl: cannot open " + path);
    out << trace_to_jsonl(trace);
}

}  // namespace fedpae::net
