#include "doctest.h"

#include <algorithm>
#include <set>

#include "fedpae/data.hpp"
#include "fedpae/learners.hpp"
#include "fedpae/network.hpp"

using namespace fedpae;
using namespace fedpae::net;

namespace {

Message random_message(Rng& rng) {
    Message m;
    m.type = static_cast<MessageType>(rng.uniform_int(4));
    m.sender = static_cast<uint32_t>(rng.next_u64());
    m.receiver = static_cast<uint32_t>(rng.next_u64());
    m.payload.resize(rng.uniform_int(200));
    for (auto& b : m.payload) b = static_cast<uint8_t>(rng.uniform_int(256));
    return m;
}

// A tiny federation: n clients, each with `slots` centroid models trained on
// its own slice of a shared synthetic dataset.
std::vector<ClientContext> make_contexts(int n_clients, int n_slots, uint64_t seed) {
    data::SyntheticSpec s;
    s.n_classes = 3;
    s.n_features = 3;
    s.n_samples = 60 * n_clients;
    s.class_separation = 4.0;
    s.noise_scale = 1.0;
    s.seed = seed;
    auto ds = data::generate_synthetic(s);

    std::vector<ClientContext> contexts(n_clients);
    for (int c = 0; c < n_clients; ++c) {
        std::vector<int> train_idx, val_idx;
        for (int i = c * 60; i < (c + 1) * 60; ++i)
            (i % 4 == 3 ? val_idx : train_idx).push_back(i);
        auto train_set = data::gather(ds, train_idx);
        contexts[c].val = data::gather(ds, val_idx);
        for (int j = 0; j < n_slots; ++j) {
            learners::LearnerSpec spec;
            spec.architecture = j % 2 == 0 ? learners::Architecture::nearest_centroid
                                           : learners::Architecture::decision_stump_forest;
            spec.n_stumps = 5;
            spec.seed = derive_seed(seed, "m/" + std::to_string(c) + "/" + std::to_string(j));
            auto [pred, rep] = learners::train(spec, train_set, contexts[c].val);
            pred.origin.client_id = static_cast<uint32_t>(c);
            pred.origin.slot = static_cast<uint32_t>(j);
            contexts[c].slot_models.push_back(std::move(pred));
        }
    }
    return contexts;
}

SimOptions small_options(uint64_t seed, int k = 2,
                         selection::StorageMode mode = selection::StorageMode::full_models) {
    SimOptions opts;
    opts.storage_mode = mode;
    opts.ensemble_k = k;
    opts.nsga.population_size = 10;
    opts.nsga.generations = 4;
    opts.seed = seed;
    return opts;
}

}  // namespace

TEST_CASE("empty-payload frame is exactly 21 bytes") {
    Message m;
    m.type = MessageType::BENCH_REQUEST;
    m.sender = 1;
    m.receiver = 2;
    auto frame = encode_message(m);
    CHECK(frame.size() == 21);
    CHECK(frame[0] == 'F');
    CHECK(frame[1] == 'P');
    CHECK(frame[2] == 'N');
    CHECK(frame[3] == '1');
}

TEST_CASE("codec round-trips arbitrary valid messages") {
    Rng rng(6);
    for (int trial = 0; trial < 500; ++trial) {
        Message m = random_message(rng);
        auto frame = encode_message(m);
        auto res = decode_message({frame.data(), frame.size()});
        REQUIRE(res.status == DecodeStatus::ok);
        CHECK(res.consumed == frame.size());
        CHECK(res.message == m);
    }
}

TEST_CASE("single byte flips are always detected") {
    Rng rng(7);
    Message m = random_message(rng);
    auto frame = encode_message(m);
    for (size_t pos = 0; pos < frame.size(); ++pos) {
        auto bad = frame;
        bad[pos] ^= 0x40;
        bool flagged = false;
        try {
            auto res = decode_message({bad.data(), bad.size()});
            // A flip in the length field can make the frame look truncated.
            flagged = res.status == DecodeStatus::incomplete;
        } catch (const ProtocolError&) {
            flagged = true;
        } catch (const CorruptionError&) {
            flagged = true;
        }
        CHECK(flagged);
    }
}

TEST_CASE("truncated frames signal incomplete, then decode once whole") {
    Rng rng(8);
    Message m = random_message(rng);
    auto frame = encode_message(m);
    for (size_t cut = 4; cut < frame.size(); ++cut) {
        auto res = decode_message({frame.data(), cut});
        CHECK(res.status == DecodeStatus::incomplete);
    }
    CHECK(decode_message({frame.data(), frame.size()}).status == DecodeStatus::ok);
}

TEST_CASE("frame reader reassembles byte-by-byte streams") {
    Rng rng(9);
    std::vector<Message> sent;
    std::vector<uint8_t> wire;
    for (int i = 0; i < 5; ++i) {
        sent.push_back(random_message(rng));
        auto frame = encode_message(sent.back());
        wire.insert(wire.end(), frame.begin(), frame.end());
    }
    FrameReader reader;
    std::vector<Message> received;
    for (uint8_t b : wire) {
        reader.feed({&b, 1});
        while (auto msg = reader.next()) received.push_back(*msg);
    }
    REQUIRE(received.size() == sent.size());
    for (size_t i = 0; i < sent.size(); ++i) CHECK(received[i] == sent[i]);
}

TEST_CASE("synchronous round delivers every model before selection") {
    auto contexts = make_contexts(2, 2, 11);
    auto topo = Topology::complete(2, 1);
    std::vector<Event> schedule;
    for (int c = 0; c < 2; ++c)
        for (int s = 0; s < 2; ++s)
            schedule.push_back({0, EventKind::TRAIN_DONE, c, s, -1, -1, 0, std::nullopt});
    for (int c = 0; c < 2; ++c)
        schedule.push_back({2, EventKind::SELECT, c, -1, -1, -1, 0, std::nullopt});

    auto result = run_simulation(topo, schedule, contexts, small_options(1));
    for (int c = 0; c < 2; ++c) {
        CHECK(result.benches[c].size() == 4);  // own 2 + peer 2
        REQUIRE(result.selections[c].size() == 1);
    }
}

TEST_CASE("selecting at t=0 sees only local models") {
    auto contexts = make_contexts(2, 2, 12);
    auto topo = Topology::complete(2, 1);
    std::vector<Event> schedule;
    for (int c = 0; c < 2; ++c)
        for (int s = 0; s < 2; ++s)
            schedule.push_back({0, EventKind::TRAIN_DONE, c, s, -1, -1, 0, std::nullopt});
    schedule.push_back({0, EventKind::SELECT, 1, -1, -1, -1, 0, std::nullopt});

    auto result = run_simulation(topo, schedule, contexts, small_options(2));
    REQUIRE(result.selections[1].size() == 1);
    const auto& sel = result.selections[1][0].result;
    CHECK(sel.local_fraction == doctest::Approx(1.0));  // nothing else had arrived
    for (const auto& id : sel.chosen_model_ids) CHECK(id.origin_client == 1);
}

TEST_CASE("simulation is deterministic and conserves messages") {
    auto contexts = make_contexts(3, 2, 13);
    auto topo = Topology::complete(3, 2);
    auto schedule = build_default_schedule(3, 2, 5, 8, 77);
    auto a = run_simulation(topo, schedule, contexts, small_options(3));
    auto b = run_simulation(topo, schedule, contexts, small_options(3));
    CHECK(trace_to_jsonl(a.trace) == trace_to_jsonl(b.trace));
    CHECK(a.sends == a.delivers + a.queued_at_end);
    CHECK_FALSE(a.trace.empty());
}

TEST_CASE("offline clients queue deliveries until they return") {
    auto contexts = make_contexts(2, 1, 14);
    auto topo = Topology::complete(2, 1);
    std::vector<Event> schedule;
    schedule.push_back({0, EventKind::CLIENT_OFFLINE, 1, -1, -1, -1, 10, std::nullopt});
    schedule.push_back({0, EventKind::TRAIN_DONE, 0, 0, -1, -1, 0, std::nullopt});
    schedule.push_back({0, EventKind::TRAIN_DONE, 1, 0, -1, -1, 0, std::nullopt});
    schedule.push_back({5, EventKind::SELECT, 1, -1, -1, -1, 0, std::nullopt});
    schedule.push_back({12, EventKind::SELECT, 1, -1, -1, -1, 0, std::nullopt});

    auto result = run_simulation(topo, schedule, contexts, small_options(4, 1));
    // At t=5 the peer model is still queued; by t=12 it has been flushed.
    REQUIRE(result.selections[1].size() == 2);
    CHECK(result.benches[1].size() == 2);
    bool queued_seen = false, online_seen = false;
    for (const auto& r : result.trace) {
        queued_seen |= r.kind == "QUEUED";
        online_seen |= r.kind == "ONLINE";
    }
    CHECK(queued_seen);
    CHECK(online_seen);
    CHECK(result.sends == result.delivers + result.queued_at_end);
}

TEST_CASE("a settle delay shorter than the stagger leaves benches uneven") {
    auto contexts = make_contexts(3, 1, 15);
    auto topo = Topology::complete(3, 1);
    std::vector<Event> schedule;
    schedule.push_back({0, EventKind::TRAIN_DONE, 0, 0, -1, -1, 0, std::nullopt});
    schedule.push_back({0, EventKind::TRAIN_DONE, 1, 0, -1, -1, 0, std::nullopt});
    schedule.push_back({10, EventKind::TRAIN_DONE, 2, 0, -1, -1, 0, std::nullopt});
    schedule.push_back({2, EventKind::SELECT, 0, -1, -1, -1, 0, std::nullopt});
    schedule.push_back({2, EventKind::SELECT, 1, -1, -1, -1, 0, std::nullopt});
    schedule.push_back({12, EventKind::SELECT, 2, -1, -1, -1, 0, std::nullopt});

    auto result = run_simulation(topo, schedule, contexts, small_options(5, 1));
    // Clients 0/1 select before client 2's model exists; client 2 sees all.
    std::vector<size_t> bench_sizes_at_select;
    for (int c = 0; c < 3; ++c) {
        REQUIRE(result.selections[c].size() == 1);
        bench_sizes_at_select.push_back(result.selections[c][0].result.local_seed_mask.size());
    }
    CHECK(bench_sizes_at_select == std::vector<size_t>{2, 2, 3});
    // All three models exist everywhere at the end.
    for (int c = 0; c < 3; ++c) CHECK(result.benches[c].size() == 3);
}

TEST_CASE("default schedule is deterministic and degenerates to synchronous") {
    auto sync = build_default_schedule(3, 2, 0, 4, 1);
    for (const auto& e : sync)
        if (e.kind == EventKind::TRAIN_DONE) CHECK(e.at == 0);

    auto a = build_default_schedule(4, 3, 9, 5, 42);
    auto b = build_default_schedule(4, 3, 9, 5, 42);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].at == b[i].at);
        CHECK(a[i].kind == b[i].kind);
        CHECK(a[i].client == b[i].client);
    }
}

TEST_CASE("removing one client leaves the rest executable") {
    auto contexts = make_contexts(3, 1, 16);
    auto topo = Topology::complete(3, 1).without_client(2);
    std::vector<Event> schedule;
    for (int c = 0; c < 2; ++c)
        schedule.push_back({0, EventKind::TRAIN_DONE, c, 0, -1, -1, 0, std::nullopt});
    for (int c = 0; c < 2; ++c)
        schedule.push_back({3, EventKind::SELECT, c, -1, -1, -1, 0, std::nullopt});
    auto result = run_simulation(topo, schedule, contexts, small_options(6, 1));
    CHECK(result.benches[0].size() == 2);
    CHECK(result.benches[1].size() == 2);
    CHECK(result.benches[2].size() == 0);
}

TEST_CASE("schedule referencing an unknown client fails before execution") {
    auto contexts = make_contexts(2, 1, 17);
    auto topo = Topology::complete(2, 1);
    std::vector<Event> schedule;
    schedule.push_back({0, EventKind::TRAIN_DONE, 0, 0, -1, -1, 0, std::nullopt});
    schedule.push_back({1, EventKind::SELECT, 9, -1, -1, -1, 0, std::nullopt});
    CHECK_THROWS_AS(run_simulation(topo, schedule, contexts, small_options(7, 1)), InputError);
}

TEST_CASE("predictions-only clients store columns and fetch chosen models") {
    auto contexts = make_contexts(3, 2, 18);
    auto topo = Topology::complete(3, 1);
    auto schedule = build_default_schedule(3, 2, 0, 3, 5);
    auto opts = small_options(8, 3, selection::StorageMode::predictions_only);
    auto result = run_simulation(topo, schedule, contexts, opts);

    for (int c = 0; c < 3; ++c) {
        CHECK(result.benches[c].size() == 6);
        for (const auto& e : result.benches[c].entries) {
            CHECK(e.column.has_value());
            CHECK_FALSE(e.model.has_value());
        }
        REQUIRE(result.selections[c].size() == 1);
        const auto& sel = result.selections[c][0].result;
        // Every chosen peer model was fetched via MODEL_REQUEST afterwards.
        for (const auto& id : sel.chosen_model_ids) {
            if (id.origin_client == static_cast<uint32_t>(c)) continue;
            CHECK(result.fetched[c].count(id) == 1);
        }
    }
    bool request_seen = false;
    for (const auto& r : result.trace)
        request_seen |= r.detail.find("MODEL_REQUEST") != std::string::npos;
    CHECK(request_seen);
}

TEST_CASE("bench request pulls the peer's published models") {
    auto contexts = make_contexts(2, 2, 21);
    auto topo = Topology::complete(2, 1);
    std::vector<Event> schedule;
    for (int s = 0; s < 2; ++s)
        schedule.push_back({0, EventKind::TRAIN_DONE, 0, s, -1, -1, 0, std::nullopt});
    // Client 1 never trains; it pulls client 0's bench instead.
    Message req;
    req.type = MessageType::BENCH_REQUEST;
    Event pull;
    pull.at = 3;
    pull.kind = EventKind::SEND;
    pull.from = 1;
    pull.to = 0;
    pull.message = req;
    schedule.push_back(pull);

    auto result = run_simulation(topo, schedule, contexts, small_options(10, 1));
    // Push from TRAIN_DONE already delivered both models; the pull causes a
    // re-offer which deduplicates, so the bench stays at 2.
    CHECK(result.benches[1].size() == 2);
    int model_deliveries = 0;
    for (const auto& r : result.trace)
        if (r.kind == "DELIVER" && r.client == 1 && r.detail.find("MODEL") != std::string::npos)
            ++model_deliveries;
    CHECK(model_deliveries >= 4);  // 2 pushed + 2 pulled replies
}

TEST_CASE("prediction transfers are validated against the local validation set") {
    auto contexts = make_contexts(2, 1, 22);
    auto topo = Topology::complete(2, 1);

    selection::ModelId fake{0, 9, 1234};
    selection::PredictionColumn good(contexts[1].val.size() * 3, 1.0f / 3.0f);
    Message ok_msg;
    ok_msg.type = MessageType::PREDICTIONS;
    ok_msg.payload = encode_predictions_payload(fake, learners::Architecture::nearest_centroid,
                                                good);
    Message bad_msg;
    bad_msg.type = MessageType::PREDICTIONS;
    bad_msg.payload = encode_predictions_payload(
        selection::ModelId{0, 10, 99}, learners::Architecture::nearest_centroid,
        selection::PredictionColumn(7, 0.5f));

    std::vector<Event> schedule;
    schedule.push_back({0, EventKind::TRAIN_DONE, 1, 0, -1, -1, 0, std::nullopt});
    Event send_ok;
    send_ok.at = 1;
    send_ok.kind = EventKind::SEND;
    send_ok.from = 0;
    send_ok.to = 1;
    send_ok.message = ok_msg;
    schedule.push_back(send_ok);
    Event send_bad = send_ok;
    send_bad.at = 2;
    send_bad.message = bad_msg;
    schedule.push_back(send_bad);

    auto opts = small_options(11, 1, selection::StorageMode::predictions_only);
    auto result = run_simulation(topo, schedule, contexts, opts);
    CHECK(result.benches[1].size() == 2);  // own + accepted column, bad one rejected
    bool rejected = false;
    for (const auto& r : result.trace) rejected |= r.kind == "REJECTED";
    CHECK(rejected);
}

TEST_CASE("full and predictions-only storage agree on the selected ensembles") {
    auto contexts = make_contexts(3, 2, 19);
    auto topo = Topology::complete(3, 1);
    auto schedule = build_default_schedule(3, 2, 0, 3, 6);
    auto full = run_simulation(topo, schedule, contexts, small_options(9, 2));
    auto compact = run_simulation(topo, schedule, contexts,
                                  small_options(9, 2, selection::StorageMode::predictions_only));
    for (int c = 0; c < 3; ++c) {
        REQUIRE(full.selections[c].size() == 1);
        REQUIRE(compact.selections[c].size() == 1);
        CHECK(full.selections[c][0].result.chosen_mask.mask ==
              compact.selections[c][0].result.chosen_mask.mask);
        CHECK(full.selections[c][0].result.val_accuracy ==
              doctest::Approx(compact.selections[c][0].result.val_accuracy));
    }
}

TEST_CASE("frame reader propagates protocol errors on garbage input") {
    FrameReader reader;
    std::vector<uint8_t> junk{0xde, 0xad, 0xbe, 0xef, 1, 2, 3};
    reader.feed({junk.data(), junk.size()});
    CHECK_THROWS_AS(reader.next(), ProtocolError);
}

TEST_CASE("model-ref payloads round-trip") {
    selection::ModelId id{7, 3, 0xABCDEF0123456789ull};
    auto payload = encode_model_ref(id);
    CHECK(decode_model_ref({payload.data(), payload.size()}) == id);
}
