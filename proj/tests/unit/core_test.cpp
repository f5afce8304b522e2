#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "thumbnet/core/grad_check.hpp"
#include "thumbnet/core/ops.hpp"
#include "thumbnet/core/parallel.hpp"
#include "thumbnet/core/rng.hpp"
#include "thumbnet/core/tensor_io.hpp"

namespace tn = thumbnet;

using D = tn::Tensor<double>;
using F = tn::Tensor<float>;

TEST(Tensor, ConstructionAndAccess) {
  D t(tn::Shape{2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(t.data()[i], 0.0);

  D v(tn::Shape{2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(v(0, 1), 2.0);
  EXPECT_EQ(v(1, 0), 3.0);
  EXPECT_THROW(v(2, 0), tn::GeometryError);

  EXPECT_THROW(D(tn::Shape{2, 2}, {1, 2, 3}), tn::GeometryError);

  D s = D::scalar(7.5);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s.item(), 7.5);

  EXPECT_EQ(D::ones(tn::Shape{3}).data()[2], 1.0);
  EXPECT_EQ(D::full(tn::Shape{2}, -2.5).data()[1], -2.5);
}

TEST(Tensor, CopyOnWrite) {
  D a(tn::Shape{3}, {1, 2, 3});
  D b = a;
  EXPECT_EQ(a.data(), b.data());
  b.mutable_data()[0] = 9;
  EXPECT_NE(a.data(), b.data());
  EXPECT_EQ(a(0), 1.0);
  EXPECT_EQ(b(0), 9.0);
}

TEST(Tensor, ReshapeSharesAndChecks) {
  D a(tn::Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  D r = a.reshaped(tn::Shape{3, 2});
  EXPECT_EQ(r.data(), a.data());
  EXPECT_EQ(r(2, 1), 6.0);
  EXPECT_THROW(a.reshaped(tn::Shape{4}), tn::GeometryError);
}

TEST(ForwardEval, ElementwiseExamples) {
  D a(tn::Shape{2}, {1, 2});
  D b(tn::Shape{2}, {3, 4});
  D s = tn::add(a, b);
  EXPECT_EQ(s(0), 4.0);
  EXPECT_EQ(s(1), 6.0);

  D m = tn::mul(a, b);
  EXPECT_EQ(m(0), 3.0);
  EXPECT_EQ(m(1), 8.0);

  EXPECT_THROW(tn::add(a, D(tn::Shape{3})), tn::GeometryError);
  try {
    tn::add(a, D(tn::Shape{3}));
    FAIL() << "expected geometry error";
  } catch (const tn::GeometryError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2]"), std::string::npos);
    EXPECT_NE(what.find("[3]"), std::string::npos);
  }
}

TEST(ForwardEval, MatmulIdentity) {
  tn::Rng rng(11);
  D a(tn::Shape{3, 4});
  rng.fill_normal(a, 0.0, 1.0);
  D eye(tn::Shape{3, 3});
  for (int i = 0; i < 3; ++i) eye.ref(i, i) = 1.0;
  D out = tn::matmul(eye, a);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_DOUBLE_EQ(out.data()[i], a.data()[i]);
}

TEST(ForwardEval, ReduceMeanExample) {
  D a(tn::Shape{2, 2}, {1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(tn::mean_all(a).item(), 2.5);
}

TEST(ForwardEval, ReduceAxes) {
  D a(tn::Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  D rows = tn::reduce_sum(a, {1});
  EXPECT_EQ(rows.shape(), (tn::Shape{2}));
  EXPECT_DOUBLE_EQ(rows(0), 6.0);
  EXPECT_DOUBLE_EQ(rows(1), 15.0);
  D cols = tn::reduce_mean(a, {0}, /*keepdims=*/true);
  EXPECT_EQ(cols.shape(), (tn::Shape{1, 3}));
  EXPECT_DOUBLE_EQ(cols(0, 2), 4.5);
  EXPECT_THROW(tn::reduce_sum(a, {2}), tn::GeometryError);
}

TEST(ForwardEval, NonFiniteIsNumericFault) {
  D a(tn::Shape{2}, {-1.0, 1.0});
  EXPECT_THROW(tn::log(a), tn::NumericFault);
}

TEST(ForwardEval, BroadcastRules) {
  D a(tn::Shape{2, 1}, {1, 2});
  D b(tn::Shape{1, 3}, {10, 20, 30});
  D s = tn::add(a, b);
  EXPECT_EQ(s.shape(), (tn::Shape{2, 3}));
  EXPECT_DOUBLE_EQ(s(1, 2), 32.0);

  D e = tn::broadcast_to(a, tn::Shape{2, 4});
  EXPECT_EQ(e.shape(), (tn::Shape{2, 4}));
  EXPECT_DOUBLE_EQ(e(1, 3), 2.0);
  EXPECT_THROW(tn::broadcast_to(b, tn::Shape{2, 2}), tn::GeometryError);
}

TEST(BackwardGrad, SumGivesOnes) {
  tn::Tape<double> tape;
  D x(tn::Shape{2, 3}, {1, -2, 3, 0, 5, -6});
  tape.watch(x);
  D loss = tn::sum_all(x);
  tape.backward(loss);
  D g = tape.grad(x);
  for (std::size_t i = 0; i < g.numel(); ++i) EXPECT_DOUBLE_EQ(g.data()[i], 1.0);
}

TEST(BackwardGrad, SumOfSquares) {
  tn::Tape<double> tape;
  D x(tn::Shape{2}, {1, -2});
  tape.watch(x);
  D loss = tn::sum_all(tn::mul(x, x));
  tape.backward(loss);
  D g = tape.grad(x);
  EXPECT_DOUBLE_EQ(g(0), 2.0);
  EXPECT_DOUBLE_EQ(g(1), -4.0);
}

TEST(BackwardGrad, DisconnectedIsZero) {
  tn::Tape<double> tape;
  D x(tn::Shape{2}, {1, 2});
  D w(tn::Shape{3}, {5, 6, 7});
  tape.watch(x);
  tape.watch(w);
  D loss = tn::sum_all(x);
  tape.backward(loss);
  D g = tape.grad(w);
  for (std::size_t i = 0; i < g.numel(); ++i) EXPECT_DOUBLE_EQ(g.data()[i], 0.0);
}

TEST(BackwardGrad, AccumulationIsAdditive) {
  tn::Tape<double> tape;
  D x(tn::Shape{2}, {3, -1});
  tape.watch(x);
  D loss = tn::sum_all(tn::add(tn::mul(x, x), x));
  tape.backward(loss);
  D g = tape.grad(x);
  EXPECT_DOUBLE_EQ(g(0), 7.0);
  EXPECT_DOUBLE_EQ(g(1), -1.0);
}

TEST(BackwardGrad, UsageErrors) {
  tn::Tape<double> tape;
  D x(tn::Shape{2}, {1, 2});
  tape.watch(x);
  D y = tn::mul(x, x);
  EXPECT_THROW(tape.backward(y), tn::UsageError);

  D stray(tn::Shape{}, {1.0});
  EXPECT_THROW(tape.backward(stray), tn::UsageError);

  D loss = tn::sum_all(y);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), tn::UsageError);

  tn::Tape<double> other;
  D w(tn::Shape{2}, {1, 1});
  other.watch(w);
  EXPECT_THROW(tn::add(x, w), tn::UsageError);
  EXPECT_THROW(other.grad(x), tn::UsageError);
}

TEST(BackwardGrad, ConstantsAreNotRecorded) {
  tn::Tape<double> tape;
  D x(tn::Shape{2}, {1, 2});
  D c(tn::Shape{2}, {5, 5});
  tape.watch(x);
  const std::size_t before = tape.node_count();
  D unrelated = tn::add(c, c);
  EXPECT_EQ(tape.node_count(), before);
  (void)unrelated;
  D loss = tn::sum_all(tn::mul(x, c));
  tape.backward(loss);
  D g = tape.grad(x);
  EXPECT_DOUBLE_EQ(g(0), 5.0);
  EXPECT_DOUBLE_EQ(g(1), 5.0);
}

TEST(BackwardGrad, DeterministicGradients) {
  auto run = [] {
    tn::Rng rng(123);
    tn::Tape<double> tape;
    D x(tn::Shape{4, 4});
    rng.fill_normal(x, 0.0, 1.0);
    tape.watch(x);
    D y = tn::matmul(x, tn::transpose2d(x));
    D loss = tn::mean_all(tn::mul(y, y));
    tape.backward(loss);
    return tape.grad(x);
  };
  D g1 = run();
  D g2 = run();
  ASSERT_EQ(g1.numel(), g2.numel());
  EXPECT_EQ(std::memcmp(g1.data(), g2.data(), g1.numel() * sizeof(double)), 0);
}

TEST(GradCheck, SumOfSquaresBelow1em6) {
  tn::Rng rng(7);
  D x(tn::Shape{3, 2});
  rng.fill_normal(x, 0.0, 1.0);
  auto f = [](const D& v) { return tn::sum_all(tn::mul(v, v)); };
  EXPECT_LT(tn::grad_check<double>(f, x, 1e-4), 1e-6);
}

TEST(GradCheck, ConstantFunction) {
  D x(tn::Shape{3}, {1, 2, 3});
  auto f = [](const D& v) { return tn::scale(tn::sum_all(v), 0.0); };
  EXPECT_LT(tn::grad_check<double>(f, x, 1e-4), 1e-12);
}

TEST(GradCheck, NonFiniteFaults) {
  D x(tn::Shape{1}, {1e-6});
  auto f = [](const D& v) { return tn::sum_all(tn::log(v)); };
  EXPECT_THROW(tn::grad_check<double>(f, x, 1e-4), tn::NumericFault);
}

// Every differentiable primitive, checked at 10 random points each.
TEST(GradCheck, AllPrimitivesBelow1em5) {
  tn::Rng rng(42);
  D b(tn::Shape{2, 3});
  rng.fill_normal(b, 0.0, 1.0);
  D brow(tn::Shape{1, 3});
  rng.fill_normal(brow, 0.0, 1.0);
  D bmat(tn::Shape{3, 4});
  rng.fill_normal(bmat, 0.0, 1.0);

  using Fn = std::function<D(const D&)>;
  const std::vector<std::pair<const char*, Fn>> cases = {
      {"add", [&](const D& x) { return tn::sum_all(tn::mul(tn::add(x, b), tn::add(x, b))); }},
      {"sub", [&](const D& x) { return tn::sum_all(tn::mul(tn::sub(x, b), x)); }},
      {"multiply", [&](const D& x) { return tn::sum_all(tn::mul(tn::mul(x, b), x)); }},
      {"scale", [&](const D& x) { return tn::sum_all(tn::scale(tn::mul(x, x), -1.5)); }},
      {"matmul",
       [&](const D& x) {
         D y = tn::matmul(x, bmat);
         return tn::sum_all(tn::mul(y, y));
       }},
      {"reshape",
       [&](const D& x) {
         D y = tn::reshape(x, tn::Shape{3, 2});
         return tn::sum_all(tn::mul(y, y));
       }},
      {"transpose",
       [&](const D& x) {
         D y = tn::transpose2d(x);
         return tn::sum_all(tn::mul(y, y));
       }},
      {"reduce_sum",
       [&](const D& x) {
         D y = tn::reduce_sum(tn::mul(x, x), {0});
         return tn::sum_all(tn::mul(y, y));
       }},
      {"reduce_mean",
       [&](const D& x) {
         D y = tn::reduce_mean(tn::mul(x, b), {1}, true);
         return tn::sum_all(tn::mul(y, y));
       }},
      {"exp", [&](const D& x) { return tn::sum_all(tn::exp(tn::scale(x, 0.5))); }},
      {"log",
       [&](const D& x) {
         D pos = tn::add_scalar(tn::mul(x, x), 0.7);
         return tn::sum_all(tn::log(pos));
       }},
      {"sqrt",
       [&](const D& x) {
         D pos = tn::add_scalar(tn::mul(x, x), 0.5);
         return tn::sum_all(tn::sqrt(pos));
       }},
      {"max", [&](const D& x) { return tn::sum_all(tn::mul(tn::elem_max(x, b), x)); }},
      {"power",
       [&](const D& x) {
         D pos = tn::add_scalar(tn::mul(x, x), 0.5);
         return tn::sum_all(tn::pow_scalar(pos, 1.7));
       }},
      {"broadcast",
       [&](const D& x) {
         D y = tn::mul(x, brow);
         return tn::sum_all(tn::mul(y, y));
       }},
      {"softmax",
       [&](const D& x) {
         D y = tn::softmax(x);
         return tn::sum_all(tn::mul(y, y));
       }},
  };

  for (const auto& [name, fn] : cases) {
    for (int trial = 0; trial < 10; ++trial) {
      D x(tn::Shape{2, 3});
      rng.fill_normal(x, 0.0, 1.0);
      const double err = tn::grad_check<double>(fn, x, 1e-4);
      EXPECT_LT(err, 1e-5) << name << " trial " << trial;
    }
  }
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  tn::Rng rng(5);
  D x(tn::Shape{4, 7});
  rng.fill_normal(x, 0.0, 3.0);
  D y = tn::softmax(x);
  for (std::size_t i = 0; i < 4; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < 7; ++j) sum += y(i, j);
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
  D shifted = tn::softmax(tn::add_scalar(x, 123.25));
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_NEAR(y.data()[i], shifted.data()[i], 1e-9);
  }
  D uniform = tn::softmax(D::full(tn::Shape{1, 5}, 0.3));
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(uniform(0, j), 0.2, 1e-12);
}

TEST(TensorIo, RoundTripFloatAndDouble) {
  tn::Rng rng(9);
  F tf(tn::Shape{2, 3, 4});
  rng.fill_normal(tf, 0.0f, 1.0f);
  std::ostringstream os(std::ios::binary);
  tn::save_tsr1(os, tf);
  std::istringstream is(os.str(), std::ios::binary);
  F back = tn::read_tsr1<float>(is);
  ASSERT_EQ(back.shape(), tf.shape());
  EXPECT_EQ(std::memcmp(back.data(), tf.data(), tf.numel() * sizeof(float)), 0);

  D td(tn::Shape{}, {3.14159});
  const auto bytes = tn::encode_tsr1(td);
  D dback = tn::decode_tsr1<double>(bytes);
  EXPECT_EQ(dback.item(), 3.14159);
}

TEST(TensorIo, HeaderLayout) {
  F t(tn::Shape{2, 3}, {0, 1, 2, 3, 4, 5});
  const auto bytes = tn::encode_tsr1(t);
  ASSERT_GE(bytes.size(), 14u);
  EXPECT_EQ(bytes[0], 'T');
  EXPECT_EQ(bytes[1], 'S');
  EXPECT_EQ(bytes[2], 'R');
  EXPECT_EQ(bytes[3], '1');
  EXPECT_EQ(bytes[4], 0);  // float32
  EXPECT_EQ(bytes[5], 2);  // rank
  EXPECT_EQ(bytes[6], 2);  // extent 0, little-endian
  EXPECT_EQ(bytes[7], 0);
  EXPECT_EQ(bytes[10], 3);  // extent 1
  EXPECT_EQ(bytes.size(), 6u + 8u + 6u * sizeof(float));
}

TEST(TensorIo, MalformedInputs) {
  F t(tn::Shape{2}, {1, 2});
  auto bytes = tn::encode_tsr1(t);

  auto decode = [](std::vector<std::uint8_t> b) { return tn::decode_tsr1<float>(b); };

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode(bad_magic), tn::DataFormatError);

  auto bad_dtype = bytes;
  bad_dtype[4] = 7;
  EXPECT_THROW(decode(bad_dtype), tn::DataFormatError);

  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode(truncated), tn::DataFormatError);

  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode(trailing), tn::DataFormatError);

  // float payload read back as double
  EXPECT_THROW(tn::decode_tsr1<double>(bytes), tn::DataFormatError);
}

TEST(Rng, DeterministicAndForkable) {
  tn::Rng a(1234), b(1234);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.u64(), b.u64());
  tn::Rng f1 = a.fork(1), f2 = a.fork(2), f1again = a.fork(1);
  EXPECT_EQ(f1.u64(), f1again.u64());
  EXPECT_NE(f1.seed(), f2.seed());
}

TEST(Parallel, MatchesSerialAndPropagatesErrors) {
  tn::ThreadPool pool(4);
  std::vector<int> out(1000, 0);
  pool.parallel_for(1000, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = static_cast<int>(i * 3);
  });
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(out[i], i * 3);

  EXPECT_THROW(pool.parallel_for(100,
                                 [&](std::size_t b, std::size_t) {
                                   if (b > 0) throw tn::NumericFault("boom");
                                 }),
               tn::NumericFault);

  // zero work is a no-op
  pool.parallel_for(0, [&](std::size_t, std::size_t) { FAIL(); });
}
