#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace axdelta;

namespace {

// Size of one record from the documented layout, computed independently.
std::size_t layout_record_bytes(const std::string& name, Axis axis, std::size_t d_out, std::size_t d_in) {
    const std::size_t vec = axis == Axis::Row ? d_out : d_in;
    return 4 + name.size() + 1 + 4 + 4 + d_out * ((d_in + 7) / 8) + 2 * vec;
}

DeltaLayerRecord random_record(const std::string& name, Axis axis, std::size_t d_out, std::size_t d_in,
                               std::uint64_t seed) {
    Rng r(seed);
    std::vector<float> v(axis_length(axis, d_out, d_in));
    for (float& s : v) s = static_cast<float>(r.uniform(0.001, 0.03));
    return {name, sign_mask(fixtures::random_matrix(d_out, d_in, seed + 1)), AxisScaleVector::from_float(axis, v)};
}

std::vector<DeltaLayerRecord> records_for(const ToyModel& m, std::uint64_t seed, bool zero = false) {
    std::vector<DeltaLayerRecord> out;
    std::size_t k = 0;
    for (const auto& name : linear_layer_names(m)) {
        const Matrix& w = m.weight(name);
        const Axis axis = k % 2 ? Axis::Col : Axis::Row;
        auto rec = random_record(name, axis, w.rows(), w.cols(), seed + 10 * k++);
        if (zero)
            for (auto& h : rec.scale.values) h = Half{0};
        out.push_back(std::move(rec));
    }
    return out;
}

struct Fixture {
    fixtures::TempDir dir{"artifact"};
    ToyModel base = init_base(fixtures::small_spec(31, 2));
    TensorContainer base_c = to_container(base);
    Digest fp = container_fingerprint(base_c);
    TokenBatch probe = synthetic_batches(1, 2, 8, base.spec.vocab, 3).front();
};

std::vector<std::uint8_t> with_checksum(std::vector<std::uint8_t> bytes) {
    const auto body = std::span<const std::uint8_t>(bytes).subspan(4, bytes.size() - 4 - 32);
    const Digest d = sha256(body);
    std::copy(d.begin(), d.end(), bytes.end() - 32);
    return bytes;
}

}  // namespace

TEST(Artifact, EmptyArtifactIsHeaderPlusChecksum) {
    Fixture f;
    EXPECT_EQ(kEmptyArtifactBytes, 76u);
    EXPECT_EQ(save_artifact(f.dir.file("e.dlt"), {}, f.fp), 76u);
    EXPECT_EQ(std::filesystem::file_size(f.dir.file("e.dlt")), 76u);
    EXPECT_TRUE(load_artifact(f.dir.file("e.dlt")).records.empty());
}

TEST(Artifact, SingleRowRecordSize) {
    Fixture f;
    const auto rec = random_record("blocks.0.attn.q_proj", Axis::Row, 64, 64, 1);
    EXPECT_EQ(record_payload_bytes(rec), 64u * 8 + 64u * 2);
    EXPECT_EQ(record_payload_bytes(rec), 640u);
    const std::size_t n = save_artifact(f.dir.file("one.dlt"), {rec}, f.fp);
    EXPECT_EQ(n, 76 + layout_record_bytes(rec.name, Axis::Row, 64, 64));
    EXPECT_EQ(std::filesystem::file_size(f.dir.file("one.dlt")), n);
}

TEST(Artifact, SizeArithmeticMatchesLayoutForRaggedShapes) {
    Fixture f;
    std::vector<DeltaLayerRecord> recs;
    std::size_t want = 76;
    Rng r(2);
    for (int i = 0; i < 12; ++i) {
        const std::size_t d_out = 1 + r.below(30), d_in = 1 + r.below(30);
        const Axis axis = i % 2 ? Axis::Col : Axis::Row;
        recs.push_back(random_record("r" + std::to_string(i), axis, d_out, d_in, 50 + i));
        want += layout_record_bytes(recs.back().name, axis, d_out, d_in);
    }
    EXPECT_EQ(artifact_bytes(recs), want);
    EXPECT_EQ(save_artifact(f.dir.file("ragged.dlt"), recs, f.fp), want);
    EXPECT_EQ(std::filesystem::file_size(f.dir.file("ragged.dlt")), want);
}

TEST(Artifact, RoundTripIsByteExact) {
    Fixture f;
    const auto recs = records_for(f.base, 3);
    save_artifact(f.dir.file("rt.dlt"), recs, f.fp);
    const DeltaArtifact back = load_artifact(f.dir.file("rt.dlt"));
    EXPECT_EQ(back.records, recs);
    EXPECT_EQ(back.base_fingerprint, f.fp);
    EXPECT_EQ(serialize_artifact(back), read_file(f.dir.file("rt.dlt")));
}

TEST(Artifact, CorruptionErrorsAreDistinct) {
    Fixture f;
    const auto bytes = serialize_artifact({f.fp, records_for(f.base, 4)});

    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    EXPECT_THROW(parse_artifact(flipped), ChecksumError);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 100);
    EXPECT_THROW(parse_artifact(truncated), ChecksumError);
    EXPECT_THROW(parse_artifact(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 40)), ParseError);

    auto magic = bytes;
    magic[3] = '2';
    try {
        parse_artifact(magic);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.kind(), ParseErrorKind::BadMagic);
    }

    auto version = bytes;
    version[4] = 9;
    try {
        parse_artifact(with_checksum(version));
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.kind(), ParseErrorKind::UnsupportedVersion);
    }

    // Axis byte of the first record sits after the header, name length and name.
    auto axis = bytes;
    axis[44 + 4 + std::string("blocks.0.attn.q_proj").size()] = 7;
    try {
        parse_artifact(with_checksum(axis));
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.kind(), ParseErrorKind::Malformed);
    }
}

TEST(Artifact, SerializeValidatesRecords) {
    Fixture f;
    auto rec = random_record("x", Axis::Row, 4, 8, 5);
    rec.scale.values.pop_back();
    EXPECT_THROW(serialize_artifact({f.fp, {rec}}), DimensionError);
    auto inf = random_record("x", Axis::Row, 4, 8, 5);
    inf.scale.values[0] = Half{0x7C00};
    EXPECT_THROW(serialize_artifact({f.fp, {inf}}), InvalidValueError);
    const auto ok = random_record("x", Axis::Row, 4, 8, 5);
    EXPECT_THROW(serialize_artifact({f.fp, {ok, ok}}), ParseError);
}

TEST(Apply, FingerprintGuard) {
    Fixture f;
    save_artifact(f.dir.file("a.dlt"), records_for(f.base, 6), f.fp);
    const ToyModel other = init_base(fixtures::small_spec(32, 2));
    const Digest other_fp = container_fingerprint(to_container(other));
    EXPECT_THROW(load_and_apply(other, other_fp, f.dir.file("a.dlt")), FingerprintError);
    EXPECT_NO_THROW(load_and_apply(other, other_fp, f.dir.file("a.dlt"), nullptr, ApplyOptions{true}));
    EXPECT_NO_THROW(load_and_apply(f.base, f.dir.file("a.dlt")));
}

TEST(Apply, UnknownLayerAndShapeMismatch) {
    Fixture f;
    save_artifact(f.dir.file("u.dlt"), {random_record("blocks.7.attn.q_proj", Axis::Row, 16, 16, 7)}, f.fp);
    EXPECT_THROW(load_and_apply(f.base, f.fp, f.dir.file("u.dlt")), LookupError);
    save_artifact(f.dir.file("s.dlt"), {random_record("blocks.0.attn.q_proj", Axis::Row, 16, 24, 8)}, f.fp);
    EXPECT_THROW(load_and_apply(f.base, f.fp, f.dir.file("s.dlt")), DimensionError);
}

TEST(Apply, ZeroVectorsKeepLogitsBitIdentical) {
    Fixture f;
    save_artifact(f.dir.file("z.dlt"), records_for(f.base, 9, true), f.fp);
    const ToyModel patched = load_and_apply(f.base, f.fp, f.dir.file("z.dlt"));
    EXPECT_EQ(forward(patched, f.probe).logits, forward(f.base, f.probe).logits);
    EXPECT_EQ(patched, f.base);
}

TEST(Apply, MatchesDenseReconstructionAndIsIdempotent) {
    Fixture f;
    const auto recs = records_for(f.base, 10);
    save_artifact(f.dir.file("d.dlt"), recs, f.fp);
    ApplyTiming t;
    const ToyModel a = load_and_apply(f.base, f.fp, f.dir.file("d.dlt"), &t);
    const ToyModel b = load_and_apply(f.base, f.fp, f.dir.file("d.dlt"));
    EXPECT_EQ(a, b);
    EXPECT_EQ(t.bytes_read, std::filesystem::file_size(f.dir.file("d.dlt")));
    for (const auto& rec : recs) EXPECT_EQ(a.weight(rec.name), reconstruct(f.base.weight(rec.name), rec.mask, rec.scale));
}

TEST(Apply, UntouchedTensorsKeepTheirHashes) {
    Fixture f;
    auto recs = records_for(f.base, 11);
    recs.resize(3);
    save_artifact(f.dir.file("p.dlt"), recs, f.fp);
    const TensorContainer out = to_container(load_and_apply(f.base, f.fp, f.dir.file("p.dlt")));
    std::set<std::string> patched;
    for (const auto& r : recs) patched.insert(r.name);
    for (const auto& [name, m] : f.base_c.entries) {
        const auto a = sha256(serialize_container(TensorContainer{{{name, m}}}));
        const auto b = sha256(serialize_container(TensorContainer{{{name, out.at(name)}}}));
        if (patched.count(name)) {
            EXPECT_NE(a, b) << name;
        } else {
            EXPECT_EQ(a, b) << name;
        }
    }
}

TEST(Apply, ReproducesPipelineStudentExactly) {
    Fixture f;
    const ToyModel teacher = synth_finetune(f.base, DeltaProfile{}).model;
    PipelineConfig cfg;
    cfg.calib = fixtures::small_calib();
    cfg.e2e.batches = 4;
    cfg.e2e.epochs = 1;
    const PipelineResult res = run_pipeline(f.base, teacher, cfg);
    EXPECT_EQ(res.base_fingerprint, f.fp);
    save_artifact(f.dir.file("pipe.dlt"), res.records, res.base_fingerprint);
    const ToyModel patched = load_and_apply(f.base, f.fp, f.dir.file("pipe.dlt"));
    EXPECT_EQ(forward(patched, f.probe).logits, forward(res.student, f.probe).logits);
}

TEST(SizeReport, SixtyFourSquareLayerIs12Point8) {
    const auto rec = random_record("l", Axis::Row, 64, 64, 12);
    TensorContainer c;
    c.add("l", Matrix(64, 64));
    const SizeReport s = size_report({Digest{}, {rec}}, c);
    EXPECT_EQ(s.patched_fp16_bytes, 8192u);
    EXPECT_EQ(s.patched_payload_bytes, 640u);
    EXPECT_DOUBLE_EQ(s.patched_ratio, 12.8);
}

TEST(SizeReport, RatioApproachesSixteen) {
    double prev = 0.0;
    for (std::size_t d : {64u, 256u, 1024u, 4096u}) {
        const auto rec = random_record("l", Axis::Row, d, d, 13);
        TensorContainer c;
        const SizeReport s = size_report({Digest{}, {rec}}, c);
        const double expect = 2.0 * d * d / (d * d / 8.0 + 2.0 * d);
        EXPECT_DOUBLE_EQ(s.patched_ratio, expect);
        EXPECT_GT(s.patched_ratio, prev);
        EXPECT_LT(s.patched_ratio, 16.0);
        prev = s.patched_ratio;
    }
    EXPECT_GT(prev, 15.9);
}

TEST(SizeReport, WholeModelAgainstFilesOnDisk) {
    fixtures::TempDir dir("size");
    const ToyModel base = init_base(ModelSpec{});
    const TensorContainer bc = to_container(base);
    const auto recs = records_for(base, 14);
    save_artifact(dir.file("d.dlt"), recs, container_fingerprint(bc));
    write_container(dir.file("full16.tnh"), bc, PayloadType::F16);
    const SizeReport s = size_report(load_artifact(dir.file("d.dlt")), bc);
    EXPECT_EQ(s.artifact_bytes, std::filesystem::file_size(dir.file("d.dlt")));
    std::size_t params = 0, header = 12;
    for (const auto& [name, m] : bc.entries) {
        params += m.rows() * m.cols();
        header += 4 + name.size() + 8;
    }
    EXPECT_EQ(s.fp16_checkpoint_bytes, 2 * params);
    // the file adds only the container framing
    EXPECT_EQ(std::filesystem::file_size(dir.file("full16.tnh")), header + 2 * params);
    EXPECT_GE(s.patched_ratio, 5.0);
    EXPECT_GT(s.ratio, 1.0);
}

TEST(BenchLoad, SampleCountsAndByteCounters) {
    fixtures::TempDir dir("bench");
    const ToyModel base = init_base(fixtures::small_spec(33, 2));
    const TensorContainer bc = to_container(base);
    const Digest fp = container_fingerprint(bc);
    save_artifact(dir.file("d.dlt"), records_for(base, 15), fp);
    write_container(dir.file("full.tnh"), bc, PayloadType::F16);
    const BenchReport rep = bench_load(base, fp, dir.file("d.dlt"), dir.file("full.tnh"), 10);
    EXPECT_EQ(rep.delta.samples.size(), 10u);
    EXPECT_EQ(rep.full.samples.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_LT(rep.delta.samples[i].bytes_read, rep.full.samples[i].bytes_read);
    std::ostringstream os;
    write_timing_report(os, rep);
    std::istringstream is(os.str());
    std::string line;
    int n = 0;
    while (std::getline(is, line)) ++n;
    EXPECT_EQ(n, 20);
    EXPECT_THROW(bench_load(base, fp, dir.file("d.dlt"), dir.file("full.tnh"), 0), ConfigError);
}

TEST(Report, WriteParseRoundTrip) {
    PipelineReport rep;
    rep.layers.push_back({"blocks.0.attn.q_proj", false, 0.001, 0.002, 10.5, 11.25, Axis::Row});
    rep.layers.push_back({"blocks.0.mlp.up_proj", true, 0.003, NAN, 9.0, NAN, Axis::Row});
    rep.layers.push_back({"blocks.1.mlp.down_proj", false, 0.5, 0.25, 3.0, 2.0, Axis::Col});
    rep.summary = {100.0, 20.0, 19.0, 18.0, 17.5};
    std::stringstream ss;
    write_report(ss, rep);
    const PipelineReport back = parse_report(ss);
    ASSERT_EQ(back.layers.size(), 3u);
    EXPECT_EQ(back.layers[0].val_mse_col, 0.002);
    EXPECT_TRUE(back.layers[1].scalar);
    EXPECT_TRUE(std::isnan(back.layers[1].val_mse_col));
    EXPECT_EQ(back.layers[2].chosen, Axis::Col);
    EXPECT_EQ(back.summary.final_end_loss, 17.5);

    const AxisStats st = axis_stats(back);
    EXPECT_EQ(st.total.row, 2u);
    EXPECT_EQ(st.total.col, 1u);
    EXPECT_EQ(st.by_sub_type.at("down_proj").col, 1u);
    EXPECT_EQ(st.by_depth.at(1).size(), 1u);
}

TEST(Report, MalformedLines) {
    std::istringstream a("layer=x mode=vector\n");
    EXPECT_THROW(parse_report(a), ParseError);
    std::istringstream b("garbage\n");
    EXPECT_THROW(parse_report(b), ParseError);
    std::istringstream c(
        "layer=blocks.0.attn.q_proj mode=vector val_mse_row=1 val_mse_col=2 end_loss_row=3 end_loss_col=4 chosen=diag\n");
    EXPECT_THROW(parse_report(c), ParseError);
}

TEST(Report, ArtifactStatsSumToLayerCount) {
    const ToyModel base = init_base(ModelSpec{});
    const AxisStats st = axis_stats(DeltaArtifact{Digest{}, records_for(base, 16)});
    EXPECT_EQ(st.total.row + st.total.col, 14u);
    EXPECT_EQ(st.by_sub_type.size(), 7u);
}
