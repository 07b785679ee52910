#pragma once

#include <vector>

#include "replin/common.hpp"

namespace replin::autodiff {

// Reverse-mode tape over dense matrices. Values are computed eagerly as the
// graph is built; backward() walks the tape once in reverse and accumulates
// adjoints. Scalars are 1x1 matrices.
class Tape {
 public:
  int input(Mat value);     // differentiable leaf
  int constant(Mat value);  // leaf whose adjoint is discarded

  int matmul(int a, int b);     // A B
  int matmul_tn(int a, int b);  // A' B
  int matmul_nt(int a, int b);  // A B'
  int add(int a, int b);
  int sub(int a, int b);
  int add_row(int a, int row);  // broadcast a 1xD row over every row of A
  int relu(int a);
  int cos_map(int a);  // elementwise cosine
  int scale(int a, double s);
  int center_columns(int a);      // subtract the column means
  int l2_normalize_rows(int a);   // row / (|row| + 1e-12)
  int frob2(int a);               // squared Frobenius norm, 1x1
  int cross_entropy_mean(int logits, const std::vector<int>& labels);
  int mse_mean(int pred, int target);  // |P - T|_F^2 / rows

  int s_add(int a, int b);
  int s_sub(int a, int b);
  int s_mul(int a, int b);
  int s_div(int a, int b);
  int s_sqrt(int a);
  int s_affine(int a, double mul, double add);

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  double scalar(int id) const { return value(id)(0, 0); }

  // Seeds the root (which must be 1x1) with 1 and accumulates adjoints into
  // every reachable differentiable leaf.
  void backward(int root);
  // Adjoint of a node after backward(); empty if the node was not reached.
  const Mat& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    Input, Const, MatMul, MatMulTN, MatMulNT, Add, Sub, AddRow, Relu, CosMap,
    Scale, CenterCols, L2Rows, Frob2, CeMean, MseMean,
    SAdd, SSub, SMul, SDiv, SSqrt, SAffine,
  };

  struct Node {
    Op op;
    int a = -1, b = -1;
    double mul = 0.0, off = 0.0;
    Mat value;
    Mat grad;
    Mat aux;                  // softmax cache / row norms
    std::vector<int> labels;  // cross-entropy targets
  };

  int push(Node node);
  void accum(int id, const Mat& contribution);
  const Mat& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  std::vector<Node> nodes_;
};

}  // namespace replin::autodiff
