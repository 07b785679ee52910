#include "replin/tape.hpp"

#include <cmath>

namespace replin::autodiff {

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* where) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error("dimension mismatch", where);
}

void check_scalar(const Mat& a, const char* where) {
  if (a.rows() != 1 || a.cols() != 1) throw Error("dimension mismatch", where);
}

}  // namespace

int Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::input(Mat value) {
  Node n;
  n.op = Op::Input;
  n.value = std::move(value);
  return push(std::move(n));
}

int Tape::constant(Mat value) {
  Node n;
  n.op = Op::Const;
  n.value = std::move(value);
  return push(std::move(n));
}

int Tape::matmul(int a, int b) {
  if (val(a).cols() != val(b).rows()) throw Error("dimension mismatch", "matmul");
  Node n;
  n.op = Op::MatMul;
  n.a = a;
  n.b = b;
  n.value = val(a) * val(b);
  return push(std::move(n));
}

int Tape::matmul_tn(int a, int b) {
  if (val(a).rows() != val(b).rows()) throw Error("dimension mismatch", "matmul_tn");
  Node n;
  n.op = Op::MatMulTN;
  n.a = a;
  n.b = b;
  n.value = val(a).transpose() * val(b);
  return push(std::move(n));
}

int Tape::matmul_nt(int a, int b) {
  if (val(a).cols() != val(b).cols()) throw Error("dimension mismatch", "matmul_nt");
  Node n;
  n.op = Op::MatMulNT;
  n.a = a;
  n.b = b;
  n.value = val(a) * val(b).transpose();
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  check_same_shape(val(a), val(b), "add");
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  n.value = val(a) + val(b);
  return push(std::move(n));
}

int Tape::sub(int a, int b) {
  check_same_shape(val(a), val(b), "sub");
  Node n;
  n.op = Op::Sub;
  n.a = a;
  n.b = b;
  n.value = val(a) - val(b);
  return push(std::move(n));
}

int Tape::add_row(int a, int row) {
  if (val(row).rows() != 1 || val(row).cols() != val(a).cols())
    throw Error("dimension mismatch", "add_row");
  Node n;
  n.op = Op::AddRow;
  n.a = a;
  n.b = row;
  n.value = val(a).rowwise() + val(row).row(0);
  return push(std::move(n));
}

int Tape::relu(int a) {
  Node n;
  n.op = Op::Relu;
  n.a = a;
  n.value = val(a).cwiseMax(0.0);
  return push(std::move(n));
}

int Tape::cos_map(int a) {
  Node n;
  n.op = Op::CosMap;
  n.a = a;
  n.value = val(a).array().cos().matrix();
  return push(std::move(n));
}

int Tape::scale(int a, double s) {
  Node n;
  n.op = Op::Scale;
  n.a = a;
  n.mul = s;
  n.value = s * val(a);
  return push(std::move(n));
}

int Tape::center_columns(int a) {
  Node n;
  n.op = Op::CenterCols;
  n.a = a;
  n.value = val(a).rowwise() - val(a).colwise().mean();
  return push(std::move(n));
}

int Tape::l2_normalize_rows(int a) {
  Node n;
  n.op = Op::L2Rows;
  n.a = a;
  const Mat& x = val(a);
  n.aux = Mat(x.rows(), 1);
  n.value = Mat(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double nrm = x.row(r).norm();
    n.aux(r, 0) = nrm;
    n.value.row(r) = x.row(r) / (nrm + 1e-12);
  }
  return push(std::move(n));
}

int Tape::frob2(int a) {
  Node n;
  n.op = Op::Frob2;
  n.a = a;
  n.value = Mat::Constant(1, 1, val(a).squaredNorm());
  return push(std::move(n));
}

int Tape::cross_entropy_mean(int logits, const std::vector<int>& labels) {
  const Mat& l = val(logits);
  if (static_cast<Eigen::Index>(labels.size()) != l.rows())
    throw Error("dimension mismatch", "cross_entropy_mean labels");
  Node n;
  n.op = Op::CeMean;
  n.a = logits;
  n.labels = labels;
  n.aux = Mat(l.rows(), l.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < l.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= l.cols())
      throw Error("dimension mismatch", "class label outside logit range");
    const double mx = l.row(r).maxCoeff();
    const Arr ex = (l.row(r).array() - mx).exp();
    const double denom = ex.sum();
    n.aux.row(r) = (ex / denom).matrix();
    total += std::log(denom) + mx - l(r, y);
  }
  n.value = Mat::Constant(1, 1, total / static_cast<double>(l.rows()));
  return push(std::move(n));
}

int Tape::mse_mean(int pred, int target) {
  check_same_shape(val(pred), val(target), "mse_mean");
  Node n;
  n.op = Op::MseMean;
  n.a = pred;
  n.b = target;
  n.value = Mat::Constant(
      1, 1, (val(pred) - val(target)).squaredNorm() / static_cast<double>(val(pred).rows()));
  return push(std::move(n));
}

int Tape::s_add(int a, int b) {
  check_scalar(val(a), "s_add");
  check_scalar(val(b), "s_add");
  Node n;
  n.op = Op::SAdd;
  n.a = a;
  n.b = b;
  n.value = val(a) + val(b);
  return push(std::move(n));
}

int Tape::s_sub(int a, int b) {
  check_scalar(val(a), "s_sub");
  check_scalar(val(b), "s_sub");
  Node n;
  n.op = Op::SSub;
  n.a = a;
  n.b = b;
  n.value = val(a) - val(b);
  return push(std::move(n));
}

int Tape::s_mul(int a, int b) {
  check_scalar(val(a), "s_mul");
  check_scalar(val(b), "s_mul");
  Node n;
  n.op = Op::SMul;
  n.a = a;
  n.b = b;
  n.value = Mat::Constant(1, 1, val(a)(0, 0) * val(b)(0, 0));
  return push(std::move(n));
}

int Tape::s_div(int a, int b) {
  check_scalar(val(a), "s_div");
  check_scalar(val(b), "s_div");
  Node n;
  n.op = Op::SDiv;
  n.a = a;
  n.b = b;
  n.value = Mat::Constant(1, 1, val(a)(0, 0) / val(b)(0, 0));
  return push(std::move(n));
}

int Tape::s_sqrt(int a) {
  check_scalar(val(a), "s_sqrt");
  Node n;
  n.op = Op::SSqrt;
  n.a = a;
  n.value = Mat::Constant(1, 1, std::sqrt(val(a)(0, 0)));
  return push(std::move(n));
}

int Tape::s_affine(int a, double mul, double add) {
  check_scalar(val(a), "s_affine");
  Node n;
  n.op = Op::SAffine;
  n.a = a;
  n.mul = mul;
  n.off = add;
  n.value = Mat::Constant(1, 1, mul * val(a)(0, 0) + add);
  return push(std::move(n));
}

void Tape::accum(int id, const Mat& contribution) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.op == Op::Const) return;
  if (n.grad.size() == 0)
    n.grad = contribution;
  else
    n.grad += contribution;
}

void Tape::backward(int root) {
  check_scalar(val(root), "backward root");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(root)].grad = Mat::Constant(1, 1, 1.0);

  for (int id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) continue;
    const Mat& g = n.grad;
    switch (n.op) {
      case Op::Input:
      case Op::Const:
        break;
      case Op::MatMul:
        accum(n.a, g * val(n.b).transpose());
        accum(n.b, val(n.a).transpose() * g);
        break;
      case Op::MatMulTN:
        accum(n.a, val(n.b) * g.transpose());
        accum(n.b, val(n.a) * g);
        break;
      case Op::MatMulNT:
        accum(n.a, g * val(n.b));
        accum(n.b, g.transpose() * val(n.a));
        break;
      case Op::Add:
        accum(n.a, g);
        accum(n.b, g);
        break;
      case Op::Sub:
        accum(n.a, g);
        accum(n.b, -g);
        break;
      case Op::AddRow:
        accum(n.a, g);
        accum(n.b, g.colwise().sum());
        break;
      case Op::Relu:
        accum(n.a, (n.value.array() > 0.0).cast<double>().matrix().cwiseProduct(g));
        break;
      case Op::CosMap:
        accum(n.a, (-val(n.a).array().sin() * g.array()).matrix());
        break;
      case Op::Scale:
        accum(n.a, n.mul * g);
        break;
      case Op::CenterCols:
        accum(n.a, g.rowwise() - g.colwise().mean());
        break;
      case Op::L2Rows: {
        const Mat& x = val(n.a);
        Mat dx(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
          const double nrm = n.aux(r, 0);
          const double denom = nrm + 1e-12;
          const double along = x.row(r).dot(g.row(r));
          if (nrm > 0.0)
            dx.row(r) = g.row(r) / denom - x.row(r) * (along / (nrm * denom * denom));
          else
            dx.row(r) = g.row(r) / denom;
        }
        accum(n.a, dx);
        break;
      }
      case Op::Frob2:
        accum(n.a, 2.0 * g(0, 0) * val(n.a));
        break;
      case Op::CeMean: {
        Mat d = n.aux;
        for (Eigen::Index r = 0; r < d.rows(); ++r)
          d(r, n.labels[static_cast<std::size_t>(r)]) -= 1.0;
        accum(n.a, (g(0, 0) / static_cast<double>(d.rows())) * d);
        break;
      }
      case Op::MseMean: {
        const Mat diff = val(n.a) - val(n.b);
        const double c = 2.0 * g(0, 0) / static_cast<double>(diff.rows());
        accum(n.a, c * diff);
        accum(n.b, -c * diff);
        break;
      }
      case Op::SAdd:
        accum(n.a, g);
        accum(n.b, g);
        break;
      case Op::SSub:
        accum(n.a, g);
        accum(n.b, -g);
        break;
      case Op::SMul:
        accum(n.a, Mat::Constant(1, 1, g(0, 0) * val(n.b)(0, 0)));
        accum(n.b, Mat::Constant(1, 1, g(0, 0) * val(n.a)(0, 0)));
        break;
      case Op::SDiv: {
        const double bv = val(n.b)(0, 0);
        accum(n.a, Mat::Constant(1, 1, g(0, 0) / bv));
        accum(n.b, Mat::Constant(1, 1, -g(0, 0) * val(n.a)(0, 0) / (bv * bv)));
        break;
      }
      case Op::SSqrt: {
        const double root_val = std::max(n.value(0, 0), 1e-150);
        accum(n.a, Mat::Constant(1, 1, g(0, 0) / (2.0 * root_val)));
        break;
      }
      case Op::SAffine:
        accum(n.a, n.mul * g);
        break;
    }
  }
}

}  // namespace replin::autodiff
