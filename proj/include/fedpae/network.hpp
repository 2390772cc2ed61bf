#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedpae/common.hpp"
#include "fedpae/data.hpp"
#include "fedpae/learners.hpp"
#include "fedpae/moo.hpp"
#include "fedpae/selection.hpp"

namespace fedpae::net {

using data::LabeledSet;

/// Peer graph with per-link latency in logical ticks (>= 1). Default is the
/// complete graph with unit latency.
struct Topology {
    int n_clients = 0;
    std::vector<std::vector<int>> adjacency;   // sorted peer lists
    std::vector<std::vector<int64_t>> latency; // n x n, diagonal unused

    static Topology complete(int n_clients, int64_t link_latency = 1);
    Topology without_client(int client) const;  // removes a node and its links
    void validate() const;
};

enum class MessageType : uint8_t {
    MODEL = 0,
    PREDICTIONS = 1,
    BENCH_REQUEST = 2,
    MODEL_REQUEST = 3,
};

struct Message {
    MessageType type = MessageType::MODEL;
    uint32_t sender = 0;
    uint32_t receiver = 0;
    std::vector<uint8_t> payload;

    bool operator==(const Message&) const = default;
};

// Frame layout: magic "FPN1", u8 type, u32 sender, u32 receiver, u32 payload
// length, payload bytes, u32 CRC32 of everything before it (little-endian
// integers throughout). An empty-payload frame is exactly 21 bytes.
std::vector<uint8_t> encode_message(const Message& m);

enum class DecodeStatus : uint8_t { ok = 0, incomplete = 1 };

struct DecodeResult {
    DecodeStatus status = DecodeStatus::incomplete;
    Message message;
    size_t consumed = 0;
};

/// Decodes one frame from the front of `bytes`. Returns incomplete when more
/// bytes are needed; throws ProtocolError on bad magic and CorruptionError on
/// a CRC mismatch.
DecodeResult decode_message(std::span<const uint8_t> bytes);

uint32_t crc32(std::span<const uint8_t> bytes);

/// Incremental frame reassembly for stream transports: feed arbitrary byte
/// chunks, pull complete messages.
class FrameReader {
  public:
    void feed(std::span<const uint8_t> bytes);
    std::optional<Message> next();

  private:
    std::vector<uint8_t> buffer_;
};

// Payload builders for the request/predictions message types.
std::vector<uint8_t> encode_model_ref(const selection::ModelId& id);
selection::ModelId decode_model_ref(std::span<const uint8_t> payload);
std::vector<uint8_t> encode_predictions_payload(const selection::ModelId& id,
                                                learners::Architecture arch,
                                                const selection::PredictionColumn& column);

enum class EventKind : uint8_t {
    TRAIN_DONE = 0,
    SEND = 1,
    DELIVER = 2,
    SELECT = 3,
    CLIENT_OFFLINE = 4,
};

std::string_view event_kind_name(EventKind k);

/// One schedule entry. TRAIN_DONE uses (client, slot); SEND uses
/// (model Id via client/slot of the trained model, from, to); SELECT uses
/// client; CLIENT_OFFLINE uses (client, until). DELIVER events are generated
/// internally and carry a Message.
struct Event {
    int64_t at = 0;
    EventKind kind = EventKind::TRAIN_DONE;
    int client = -1;
    int slot = -1;
    int from = -1;
    int to = -1;
    int64_t until = 0;
    std::optional<Message> message;  // DELIVER only
};

struct TraceRecord {
    int64_t t = 0;
    std::string kind;
    int client = -1;
    std::string detail;
};

/// Per-client inputs to the simulation: the trained models for each slot and
/// the local validation set.
struct ClientContext {
    std::vector<learners::Predictor> slot_models;
    LabeledSet val;
};

struct SimOptions {
    selection::StorageMode storage_mode = selection::StorageMode::full_models;
    int ensemble_k = 5;
    moo::NsgaConfig nsga;
    selection::SelectionOptions selection;
    // In predictions_only mode, request the chosen peer models after SELECT.
    bool fetch_chosen_models = true;
    uint64_t seed = 0;
};

struct SelectionRecord {
    int64_t tick = 0;
    selection::EnsembleSelection result;
};

struct SimResult {
    std::vector<selection::ModelBench> benches;
    std::vector<std::vector<SelectionRecord>> selections;
    std::vector<TraceRecord> trace;
    // Models fetched via MODEL_REQUEST, per client.
    std::vector<std::map<selection::ModelId, learners::Predictor>> fetched;
    size_t sends = 0;
    size_t delivers = 0;
    size_t queued_at_end = 0;
};

/// Deterministic logical-clock simulation of the peer-to-peer exchange.
/// Events run in (tick, insertion order); TRAIN_DONE publishes the model to
/// the owner's bench and sends it to every peer; SELECT runs ensemble
/// selection on whatever the bench holds at that tick; offline clients queue
/// deliveries until they come back.
SimResult run_simulation(const Topology& topology, std::vector<Event> schedule,
                         const std::vector<ClientContext>& contexts, const SimOptions& options);

/// Staggered-arrival schedule: every (client, slot) trains at a seeded random
/// tick in [0, stagger]; each client selects settle_delay ticks after its own
/// last TRAIN_DONE.
std::vector<Event> build_default_schedule(int n_clients, int n_slots, int64_t stagger,
                                          int64_t settle_delay, uint64_t seed);

std::string trace_to_jsonl(const std::vector<TraceRecord>& trace);
void write_trace_jsonl(const std::vector<TraceRecord>& trace, const std::string& path);

}  // namespace fedpae::net
