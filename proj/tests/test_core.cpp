#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace axdelta;

namespace {

// Plain triple loop, accumulating k in ascending order.
Matrix naive_nt(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            float acc = 0.0f;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(j, k);
            out(i, j) = acc;
        }
    return out;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
    return a.same_shape(b) && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

// Decodes binary16 from its fields, without going through the library.
double decode_half(std::uint16_t h) {
    const int exp = (h >> 10) & 0x1F;
    const int man = h & 0x3FF;
    const double mag = exp == 0 ? std::ldexp(man, -24) : std::ldexp(1024 + man, exp - 25);
    return (h & 0x8000) ? -mag : mag;
}

// Nearest finite half by brute force over the sorted positive halves; ties
// pick the even bit pattern; beyond the largest finite value saturates.
class HalfOracle {
public:
    HalfOracle() {
        for (std::uint16_t h = 0; h <= 0x7BFF; ++h) values_.push_back(decode_half(h));
    }
    std::uint16_t nearest(float xf) const {
        const double x = xf;
        const std::uint16_t sign = std::signbit(xf) ? 0x8000 : 0;
        const double a = std::fabs(x);
        if (a >= values_.back()) return sign | 0x7BFF;
        const auto it = std::upper_bound(values_.begin(), values_.end(), a);
        const auto hi = static_cast<std::uint16_t>(it - values_.begin());
        const auto lo = static_cast<std::uint16_t>(hi - 1);
        const double dlo = a - values_[lo], dhi = values_[hi] - a;
        if (dlo < dhi) return sign | lo;
        if (dhi < dlo) return sign | hi;
        return sign | ((lo & 1) == 0 ? lo : hi);
    }
    const std::vector<double>& values() const { return values_; }

private:
    std::vector<double> values_;
};

std::uint64_t fnv1a(std::span<const float> v) {
    std::uint64_t h = 1469598103934665603ull;
    for (float f : v) {
        std::uint32_t b = std::bit_cast<std::uint32_t>(f);
        for (int k = 0; k < 4; ++k) {
            h ^= (b >> (8 * k)) & 0xFF;
            h *= 1099511628211ull;
        }
    }
    return h;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    const Matrix a = fixtures::random_matrix(4, 6, 1);
    Matrix eye(6, 6);
    for (std::size_t i = 0; i < 6; ++i) eye(i, i) = 1.0f;
    EXPECT_TRUE(bit_equal(matmul_nt(a, eye), a));
}

TEST(Matmul, HandExample) {
    const Matrix a(2, 2, std::vector<float>{1, 2, 3, 4});
    const Matrix eye(2, 2, std::vector<float>{1, 0, 0, 1});
    EXPECT_EQ(matmul_nt(a, eye), a);
}

TEST(Matmul, MatchesTripleLoopToZeroUlp) {
    const Matrix a = fixtures::random_matrix(5, 7, 2);
    const Matrix b = fixtures::random_matrix(3, 7, 3);
    EXPECT_TRUE(bit_equal(matmul_nt(a, b), naive_nt(a, b)));
    const Matrix c = fixtures::random_matrix(33, 65, 4);
    const Matrix d = fixtures::random_matrix(17, 65, 5);
    EXPECT_TRUE(bit_equal(matmul_nt(c, d), naive_nt(c, d)));
}

TEST(Matmul, OtherProductsAgreeWithTranspose) {
    const Matrix a = fixtures::random_matrix(9, 5, 6);
    const Matrix b = fixtures::random_matrix(9, 4, 7);
    EXPECT_TRUE(bit_equal(matmul_tn(a, b), naive_nt(transpose(a), transpose(b))));
    const Matrix c = fixtures::random_matrix(5, 9, 8);
    EXPECT_TRUE(bit_equal(matmul_nn(c, b), naive_nt(c, transpose(b))));
}

TEST(Matmul, DimensionMismatchNamesShapes) {
    const Matrix a(2, 3), b(4, 5);
    try {
        matmul_nt(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("(2x3)"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("(4x5)"), std::string::npos);
    }
    EXPECT_THROW(Matrix(2, 2, std::vector<float>{1, 2, 3}), DimensionError);
}

TEST(Matmul, DistributesOverDeltaDecomposition) {
    const Matrix x = fixtures::random_matrix(64, 64, 9);
    const Matrix wb = fixtures::random_matrix(64, 64, 10);
    const Matrix d = fixtures::random_matrix(64, 64, 11, 0.02);
    const Matrix lhs = matmul_nt(x, add(wb, d));
    const Matrix rhs = add(matmul_nt(x, wb), matmul_nt(x, d));
    EXPECT_LE(relative_frobenius_error(lhs, rhs), 1e-4);
}

TEST(Half, ExactValues) {
    EXPECT_EQ(to_half_round(1.0f).bits, 0x3C00);
    EXPECT_EQ(to_half_round(0.0f).bits, 0x0000);
    EXPECT_EQ(to_half_round(-0.0f).bits, 0x8000);
    EXPECT_EQ(to_half_round(-2.0f).bits, 0xC000);
    EXPECT_EQ(to_half_round(65504.0f).bits, 0x7BFF);
    EXPECT_EQ(to_half_round(std::ldexp(1.0f, -24)).bits, 0x0001);
}

TEST(Half, TiesRoundToEvenAroundOne) {
    // 1 + 2^-11 sits halfway between 0x3C00 and 0x3C01; 1 + 3*2^-11 between 0x3C01 and 0x3C02.
    EXPECT_EQ(to_half_round(1.0f + std::ldexp(1.0f, -11)).bits, 0x3C00);
    EXPECT_EQ(to_half_round(1.0f + 3 * std::ldexp(1.0f, -11)).bits, 0x3C02);
    EXPECT_EQ(to_half_round(std::nextafter(1.0f + std::ldexp(1.0f, -11), 2.0f)).bits, 0x3C01);
    EXPECT_EQ(half_to_float(Half{0x3C01}), 1.0009765625f);
}

TEST(Half, OverflowSaturatesAndNanThrows) {
    EXPECT_EQ(to_half_round(1e6f).bits, 0x7BFF);
    EXPECT_EQ(to_half_round(-1e6f).bits, 0xFBFF);
    EXPECT_EQ(to_half_round(INFINITY).bits, 0x7BFF);
    EXPECT_THROW(to_half_round(NAN), InvalidValueError);
}

TEST(Half, MatchesBruteForceOracleOnSampledGrid) {
    const HalfOracle oracle;
    std::size_t checked = 0;
    // Strided sweep over every positive and negative float bit pattern.
    for (std::uint64_t bits = 0; bits < 0x7F800000ull; bits += 9973) {
        for (std::uint32_t sign : {0u, 0x80000000u}) {
            const float x = std::bit_cast<float>(static_cast<std::uint32_t>(bits) | sign);
            ASSERT_EQ(to_half_round(x).bits, oracle.nearest(x)) << "x=" << x;
            ++checked;
        }
    }
    // Every midpoint between neighbouring halves, and one float step either side.
    const auto& v = oracle.values();
    for (std::size_t h = 0; h + 1 < v.size(); ++h) {
        const float mid = static_cast<float>(0.5 * (v[h] + v[h + 1]));
        for (float x : {std::nextafter(mid, 0.0f), mid, std::nextafter(mid, 1e9f)}) {
            ASSERT_EQ(to_half_round(x).bits, oracle.nearest(x)) << "x=" << x;
            ++checked;
        }
    }
    EXPECT_GT(checked, 400000u);
}

TEST(Half, DecodeMatchesFieldArithmetic) {
    for (std::uint32_t h = 0; h < 0x10000; ++h) {
        if (((h >> 10) & 0x1F) == 0x1F) continue;
        ASSERT_EQ(static_cast<double>(half_to_float(Half{static_cast<std::uint16_t>(h)})),
                  decode_half(static_cast<std::uint16_t>(h)));
    }
}

TEST(Half, RoundTripIsIdempotent) {
    Rng rng(12);
    for (int i = 0; i < 100000; ++i) {
        const float x = static_cast<float>(rng.normal() * std::pow(10.0, rng.uniform(-6, 4)));
        const float once = round_through_half(x);
        EXPECT_EQ(round_through_half(once), once);
    }
}

TEST(Half, RelativeErrorBoundInNormalRange) {
    Rng rng(13);
    for (int i = 0; i < 200000; ++i) {
        const float x = static_cast<float>(std::exp2(rng.uniform(-14.0, 15.99)) * (rng.sign() ? 1 : -1));
        if (std::fabs(x) > 65504.0f) continue;
        EXPECT_LE(std::fabs(static_cast<double>(x) - round_through_half(x)), std::ldexp(std::fabs(x), -11));
    }
}

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.normal(), b.normal());
}

TEST(Rng, DifferentSeedsDiffer) {
    Rng a(1), b(2);
    int differ = 0;
    for (int i = 0; i < 10; ++i) differ += a.uniform() != b.uniform();
    EXPECT_EQ(differ, 10);
}

TEST(Rng, EngineIsThePortableMersenneTwister) {
    // Required value of the 10000th output of a default-seeded mt19937_64.
    Rng r(5489);
    std::uint64_t x = 0;
    for (int i = 0; i < 10000; ++i) x = r.next_u64();
    EXPECT_EQ(x, 9981545732273789042ull);
}

TEST(Rng, NormalMeanNearZero) {
    Rng r(3);
    double s = 0.0, s2 = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s += z;
        s2 += z * z;
    }
    EXPECT_LT(std::fabs(s / n), 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(Rng, BelowStaysInRange) {
    Rng r(4);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) hits[r.below(7)]++;
    for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Container, EmptyRoundTrips) {
    fixtures::TempDir dir("empty");
    const TensorContainer c;
    const std::size_t n = write_container(dir.file("e.tnc"), c);
    EXPECT_EQ(n, 12u);
    EXPECT_EQ(read_container(dir.file("e.tnc")), c);
}

TEST(Container, ByteLayout) {
    TensorContainer c;
    c.add("w", Matrix(1, 1, std::vector<float>{-0.5f}));
    const auto bytes = serialize_container(c);
    const std::vector<std::uint8_t> expect = {'T', 'N', 'C', '1', 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 'w',
                                              1,   0,   0,   0,   1, 0, 0, 0, 0, 0, 0, 0xBF};
    EXPECT_EQ(bytes, expect);
    const auto back = parse_container(bytes);
    EXPECT_EQ(std::bit_cast<std::uint32_t>(back.at("w")(0, 0)), 0xBF000000u);
}

TEST(Container, HundredRandomMatricesKeepPayloadHashes) {
    fixtures::TempDir dir("hundred");
    Rng rng(21);
    TensorContainer c;
    std::vector<std::uint64_t> before;
    for (int i = 0; i < 100; ++i) {
        const Matrix m = fixtures::random_matrix(1 + rng.below(20), 1 + rng.below(20), 100 + i);
        before.push_back(fnv1a(m.values()));
        c.add("t" + std::to_string(i), m);
    }
    write_container(dir.file("h.tnc"), c);
    const TensorContainer back = read_container(dir.file("h.tnc"));
    ASSERT_EQ(back.entries.size(), 100u);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(fnv1a(back.at("t" + std::to_string(i)).values()), before[i]);
    EXPECT_EQ(serialize_container(back), serialize_container(c));
}

TEST(Container, HalfVariantStoresRoundedValues) {
    TensorContainer c;
    c.add("a", fixtures::random_matrix(3, 5, 22));
    const auto bytes = serialize_container(c, PayloadType::F16);
    EXPECT_EQ(bytes.size(), 12u + 4 + 1 + 8 + 2 * 15);
    const TensorContainer back = parse_container(bytes);
    for (std::size_t k = 0; k < 15; ++k)
        EXPECT_EQ(back.at("a").values()[k], round_through_half(c.at("a").values()[k]));
}

TEST(Container, ParseErrorsAreDistinct) {
    TensorContainer c;
    c.add("a", Matrix(2, 2, 1.0f));
    auto bytes = serialize_container(c);
    auto kind_of = [](std::vector<std::uint8_t> b) {
        try {
            parse_container(b);
        } catch (const ParseError& e) {
            return e.kind();
        }
        return ParseErrorKind::Malformed;  // unreachable in these cases
    };
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_EQ(kind_of(bad_magic), ParseErrorKind::BadMagic);
    auto bad_version = bytes;
    bad_version[4] = 2;
    EXPECT_EQ(kind_of(bad_version), ParseErrorKind::UnsupportedVersion);
    auto truncated = bytes;
    truncated.resize(truncated.size() - 3);
    EXPECT_EQ(kind_of(truncated), ParseErrorKind::Truncated);
    EXPECT_EQ(kind_of({'T', 'N'}), ParseErrorKind::BadMagic);

    TensorContainer dup;
    dup.add("a", Matrix(1, 1));
    dup.add("a", Matrix(1, 1));
    EXPECT_THROW(serialize_container(dup), ParseError);
    TensorContainer one;
    one.add("a", Matrix(1, 1));
    auto twice = serialize_container(one);
    const auto tail = std::vector<std::uint8_t>(twice.begin() + 12, twice.end());
    twice[8] = 2;
    twice.insert(twice.end(), tail.begin(), tail.end());
    EXPECT_EQ(kind_of(twice), ParseErrorKind::DuplicateName);
    auto trailing = bytes;
    trailing.push_back(0);
    EXPECT_EQ(kind_of(trailing), ParseErrorKind::Malformed);
}

TEST(Container, MissingFileIsIoError) {
    EXPECT_THROW(read_container("/nonexistent/dir/x.tnc"), IoError);
}

TEST(Bytes, Sha256KnownAnswer) {
    const std::string abc = "abc";
    const auto d = sha256(std::span(reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()));
    EXPECT_EQ(to_hex(d), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Adam, FirstStepMovesByLearningRate) {
    AdamW opt(2, AdamConfig{});
    std::vector<float> p = {1.0f, 1.0f};
    const std::vector<double> g = {3.0, -0.5};
    opt.step(p, g, 0.1);
    // Bias-corrected first step is lr * g / (|g| + eps).
    EXPECT_NEAR(p[0], 0.9f, 1e-6);
    EXPECT_NEAR(p[1], 1.1f, 1e-6);
}

TEST(Adam, CosineScheduleEndpoints) {
    EXPECT_DOUBLE_EQ(cosine_lr(1e-4, 0, 10), 1e-4);
    EXPECT_NEAR(cosine_lr(1e-4, 5, 10), 5e-5, 1e-12);
    EXPECT_GT(cosine_lr(1e-4, 9, 10), 0.0);
}
