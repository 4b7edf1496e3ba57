import dataclasses
import unittest
from unittest.mock import patch

import numpy as np

from chief import (
    SingularMatrixError, build_plan, chop, echelonize, invert, left_kernel, oracle_rref, verify,
)
from field import field_spec
from jobs import cex, mad
from matrix import (
    IndexSet, Matrix, ShapeError, from_rows, identity, product_rank_matrix, random_matrix,
    well_conditioned_matrix, zeros,
)
from scheduler import TaskFailure

WORKED_EXAMPLE = [
    [0, 2, 2, 0, 1, 0],
    [0, 2, 2, 1, 2, 2],
    [1, 0, 1, 0, 2, 1],
    [2, 0, 1, 0, 2, 2],
    [0, 1, 1, 2, 1, 1],
    [1, 2, 2, 2, 0, 0],
]


class TestChop(unittest.TestCase):
    def test_remainder_block(self):
        c = chop(10, 7, 4)
        self.assertEqual(c.row_cuts, (4, 4, 2))
        self.assertEqual(c.col_cuts, (4, 3))
        self.assertEqual(c.row_offsets, (0, 4, 8))
        self.assertEqual((c.a, c.b), (3, 2))

    def test_shrink_ends(self):
        self.assertEqual(chop(10, 3, 4, shrink_ends=True).row_cuts, (2, 4, 2, 2))
        self.assertEqual(chop(10, 3, 4, shrink_ends=True).col_cuts, (3,))

    def test_empty_and_invalid(self):
        self.assertEqual(chop(0, 5, 3).row_cuts, ())
        with self.assertRaises(ValueError):
            chop(4, 4, 0)


class TestWorkedExample(unittest.TestCase):
    """The 6x6 GF(3) example cut into 3x3 blocks."""

    def setUp(self):
        self.gf3 = field_spec(3)
        self.C = from_rows(self.gf3, WORKED_EXAMPLE)
        self.out = echelonize(self.C, block=3, threads=1, retain=True)

    def test_rank_and_selects(self):
        self.assertEqual(self.out.rank, 5)
        self.assertEqual(self.out.upsilon.members, (0, 1, 2, 3, 5))
        self.assertEqual(self.out.varrho.members, (0, 1, 2, 3, 5))
        self.assertEqual(self.out.dense_R().shape, (5, 1))

    def test_first_block_intermediates(self):
        A11 = self.out.snapshot(("A", 1, 1))
        self.assertEqual(A11.M.tolist(), [[0, 2], [1, 0]])
        self.assertEqual(A11.K.tolist(), [[2, 0]])
        self.assertEqual(A11.rho_prime.members, (0, 2))
        D11 = self.out.snapshot(("D", 1, 1))
        self.assertEqual(D11.R.tolist(), [[2], [2]])
        self.assertEqual(D11.gamma.members, (0, 1))
        self.assertEqual(self.out.snapshot(("B", 1, 2, 1)).tolist(), [[0, 1, 2], [0, 1, 0]])
        self.assertEqual(self.out.snapshot(("C", 1, 2, 2)).tolist(), [[1, 1, 2]])

    def test_cleared_column_and_bottom_right(self):
        D11 = self.out.snapshot(("D", 1, 1))
        A21 = self.out.snapshot(("A", 2, 1))
        C211 = self.out.snapshot(("C", 2, 1, 1))
        _, rest = cex(C211, D11.gamma)
        self.assertEqual(mad(rest, A21.A, D11.R).tolist(), [[2], [0], [2]])
        Z = mad(self.out.snapshot(("C", 2, 2, 1)), A21.A, self.out.snapshot(("B", 1, 2, 1)))
        self.assertEqual(Z.tolist(), [[0, 1, 0], [2, 2, 1], [2, 0, 2]])
        self.assertEqual(self.out.snapshot(("C", 2, 2, 2)).tolist(), [[2, 2, 1], [2, 2, 2]])

    def test_second_block_column(self):
        D21 = self.out.snapshot(("D", 2, 1))
        self.assertEqual(D21.gamma.members, (0,))
        self.assertEqual(D21.R.tolist(), [[2, 1]])
        D22 = self.out.snapshot(("D", 2, 2))
        self.assertEqual(D22.gamma.members, (0, 2))
        self.assertEqual(D22.R.tolist(), [[2], [0]])

    def test_matches_oracle_and_identity(self):
        self.assertTrue(verify(self.C, self.out))
        oracle = oracle_rref(self.C)
        self.assertEqual(oracle.rank, 5)
        self.assertEqual(self.out.dense_R(), oracle.R)
        self.assertEqual(self.out.varrho, oracle.rho)

    def test_plan_shape(self):
        plan = self.out.plan
        expected = {
            "ClearDown": 4, "Extend": 4, "UpdateRow": 2, "UpdateRowTrafo": 6,
            "RowLengthen": 4, "Copy": 2, "PreClearUp": 1, "ClearUp": 3,
        }
        for kind, count in expected.items():
            self.assertEqual(plan.count(kind), count, kind)

    def test_clear_down_ranks_in_trace(self):
        trace = self.out.report.trace
        cd = trace[trace["task_kind"] == "ClearDown"].set_index(["i", "j"])
        self.assertEqual(int(cd.loc[(1, 1), "r_prime"]), 2)
        self.assertEqual(int(cd.loc[(2, 1), "r"]), 2)
        self.assertEqual(int(cd.loc[(2, 1), "r_prime"]), 1)
        self.assertTrue((trace.loc[trace["task_kind"] != "ClearDown", "r"] == -1).all())


class TestEchelonize(unittest.TestCase):
    def test_defining_identity_lattice(self):
        fields = (field_spec(2), field_spec(3), field_spec(193), field_spec(3, 2))
        shapes = ((7, 7), (14, 7), (7, 14), (1, 1), (2, 2))
        for spec in fields:
            for seed, (m, n) in enumerate(shapes):
                for C in (random_matrix(spec, m, n, seed=seed),
                          product_rank_matrix(spec, m, n, max(1, min(m, n) // 2), seed=seed),
                          zeros(spec, m, n)):
                    for block in (1, 3, 8):
                        out = echelonize(C, block=block, threads=2, threshold=2)
                        result = verify(C, out)
                        self.assertTrue(result, f"{spec} {m}x{n} block {block}: {result.message}")

    def test_empty_shapes(self):
        spec = field_spec(5)
        for shape in ((0, 0), (0, 4), (4, 0)):
            C = zeros(spec, *shape)
            out = echelonize(C, block=2)
            self.assertEqual(out.rank, 0)
            self.assertEqual(out.dense_R().shape, (0, shape[1]))
            self.assertTrue(verify(C, out))

    def test_threads_do_not_change_output(self):
        spec = field_spec(3)
        for seed in range(5):
            C = random_matrix(spec, 20, 17, seed=seed)
            one = echelonize(C, block=4, threads=1)
            many = echelonize(C, block=4, threads=4)
            self.assertEqual(one.dense_R(), many.dense_R())
            self.assertEqual(one.varrho, many.varrho)
            self.assertEqual(one.assemble_transform(), many.assemble_transform())

    def test_block_sizes_agree(self):
        spec = field_spec(2)
        C = product_rank_matrix(spec, 24, 30, 11, seed=9)
        results = [echelonize(C, block=b, with_transform=False) for b in (1, 5, 8, 64)]
        for out in results[1:]:
            self.assertEqual(out.rank, results[0].rank)
            self.assertEqual(out.upsilon, results[0].upsilon)
            self.assertEqual(out.dense_R(), results[0].dense_R())

    def test_without_transform(self):
        spec = field_spec(3, 2)
        C = random_matrix(spec, 9, 12, seed=3)
        out = echelonize(C, block=4, with_transform=False)
        self.assertFalse(out.with_transform)
        self.assertEqual(out.plan.count("UpdateRowTrafo"), 0)
        self.assertEqual(out.plan.count("RowLengthen"), 0)
        self.assertTrue(verify(C, out))
        with self.assertRaises(ValueError):
            out.assemble_transform()

    def test_shrink_ends(self):
        spec = field_spec(7)
        C = random_matrix(spec, 13, 11, seed=5)
        out = echelonize(C, block=4, shrink_ends=True)
        self.assertEqual(out.chop.row_cuts[0], 2)
        self.assertTrue(verify(C, out))

    def test_well_conditioned_new_pivots_only_on_diagonal(self):
        spec = field_spec(3)
        C = well_conditioned_matrix(spec, 16, seed=4)
        out = echelonize(C, block=4)
        cd = out.report.trace
        cd = cd[cd["task_kind"] == "ClearDown"]
        self.assertTrue((cd.loc[cd["i"] != cd["j"], "r_prime"] == 0).all())
        self.assertTrue((cd.loc[cd["i"] == cd["j"], "r_prime"] == 4).all())

    def test_prefix_ranks(self):
        cases = (
            product_rank_matrix(field_spec(2), 12, 15, 7, seed=1),
            random_matrix(field_spec(7), 10, 14, seed=2),
            from_rows(field_spec(3), WORKED_EXAMPLE),
        )
        for C in cases:
            for block in (2, 4, 5):
                out = echelonize(C, block=block, with_transform=False)
                ends = np.cumsum(out.chop.col_cuts)
                for k, end in enumerate(ends, start=1):
                    prefix = Matrix(C.spec, C.data[:, :end])
                    found = sum(len(g) for g in out.upsilon_blocks[:k])
                    self.assertEqual(oracle_rref(prefix).rank, found, f"{C.shape} block {block} prefix {k}")

    def test_task_failure_propagates(self):
        C = random_matrix(field_spec(2), 4, 4, seed=1)
        with patch("chief.clear_down", side_effect=ArithmeticError("corrupt block")):
            with self.assertRaises(TaskFailure) as ctx:
                echelonize(C, block=2, threads=2)
        self.assertEqual(ctx.exception.node.kind, "ClearDown")

    def test_plan_counts_three_by_three(self):
        C = random_matrix(field_spec(3), 9, 9, seed=4)
        plan = build_plan(C, chop(9, 9, 3))
        expected = {
            "ClearDown": 9, "Extend": 9, "UpdateRow": 9, "UpdateRowTrafo": 18,
            "RowLengthen": 9, "Copy": 3, "PreClearUp": 3, "ClearUp": 4 + 9,
        }
        for kind, count in expected.items():
            self.assertEqual(plan.count(kind), count, kind)

    def test_clear_up_count_without_transform(self):
        for a, b in ((1, 4), (4, 1), (2, 3), (3, 2), (3, 3), (4, 4)):
            C = zeros(field_spec(2), 2 * a, 2 * b)
            plan = build_plan(C, chop(2 * a, 2 * b, 2), with_transform=False)
            expected = sum((k - 1) * (b - k + 1) for k in range(1, b + 1))
            self.assertEqual(plan.count("ClearUp"), expected, (a, b))

    def test_build_plan_rejects_bad_chop(self):
        C = zeros(field_spec(2), 4, 4)
        with self.assertRaises(ShapeError):
            build_plan(C, chop(4, 5, 2))


class TestVerify(unittest.TestCase):
    def setUp(self):
        self.spec = field_spec(5)
        self.C = product_rank_matrix(self.spec, 12, 10, 6, seed=2)
        self.out = echelonize(self.C, block=4)

    def test_detects_single_entry_corruption_in_r(self):
        rng = np.random.default_rng(0)
        keys = [k for k, m in self.out.R_blocks.items() if m.data.size]
        for _ in range(10):
            key = keys[rng.integers(len(keys))]
            block = self.out.R_blocks[key].data.copy()
            r, c = rng.integers(block.shape[0]), rng.integers(block.shape[1])
            block[r, c] = (block[r, c] + rng.integers(1, 5)) % 5
            blocks = dict(self.out.R_blocks)
            blocks[key] = Matrix(self.spec, block)
            tampered = dataclasses.replace(self.out, R_blocks=blocks)
            self.assertFalse(verify(self.C, tampered))

    def test_detects_corrupt_transform(self):
        key = next(k for k, m in self.out.T_M_blocks.items() if m.data.size)
        block = self.out.T_M_blocks[key].data.copy()
        block[0, 0] = (block[0, 0] + 1) % 5
        blocks = dict(self.out.T_M_blocks)
        blocks[key] = Matrix(self.spec, block)
        result = verify(self.C, dataclasses.replace(self.out, T_M_blocks=blocks))
        self.assertFalse(result)
        self.assertIn("identity", result.message)

    def test_detects_swapped_selected_rows(self):
        plain = echelonize(self.C, block=4, with_transform=False)
        for out in (self.out, plain):
            i, s = next((i, s) for i, s in enumerate(out.varrho_blocks) if len(s) and len(s.complement()))
            swapped = IndexSet(s.universe, tuple(sorted(s.members[1:] + s.complement().members[:1])))
            blocks = list(out.varrho_blocks)
            blocks[i] = swapped
            result = verify(self.C, dataclasses.replace(out, varrho_blocks=blocks))
            self.assertFalse(result)
        self.assertIn("selected rows", result.message)

    def test_detects_replaced_selected_row(self):
        plain = echelonize(self.C, block=4, with_transform=False)
        members = plain.varrho.members
        spare = next(x for x in range(12) if x not in members)
        rows = sorted(members[:-1] + (spare,))
        offsets = plain.chop.row_offsets
        blocks = [IndexSet(c, tuple(x - off for x in rows if off <= x < off + c))
                  for off, c in zip(offsets, plain.chop.row_cuts)]
        self.assertFalse(verify(self.C, dataclasses.replace(plain, varrho_blocks=blocks)))

    def test_detects_wrong_matrix(self):
        other = random_matrix(self.spec, 12, 10, seed=99)
        self.assertFalse(verify(other, self.out))
        self.assertFalse(verify(zeros(self.spec, 3, 3), self.out))


class TestInverseAndKernel(unittest.TestCase):
    def test_invert(self):
        for spec in (field_spec(2), field_spec(7), field_spec(2, 3)):
            C = well_conditioned_matrix(spec, 9, seed=6)
            inv = invert(C, block=4)
            self.assertEqual(Matrix(spec, spec.matmul(inv.data, C.data)), identity(spec, 9))
            self.assertEqual(Matrix(spec, spec.matmul(C.data, inv.data)), identity(spec, 9))

    def test_invert_permuted(self):
        spec = field_spec(3)
        C = from_rows(spec, [[0, 1, 0], [0, 0, 2], [1, 0, 0]])
        inv = invert(C, block=2)
        self.assertEqual(Matrix(spec, spec.matmul(C.data, inv.data)), identity(spec, 3))

    def test_invert_singular_and_non_square(self):
        spec = field_spec(3)
        with self.assertRaises(SingularMatrixError):
            invert(from_rows(spec, WORKED_EXAMPLE), block=3)
        with self.assertRaises(ShapeError):
            invert(zeros(spec, 2, 3))

    def test_left_kernel(self):
        spec = field_spec(3)
        C = from_rows(spec, WORKED_EXAMPLE)
        N = left_kernel(echelonize(C, block=3))
        self.assertEqual(N.shape, (1, 6))
        self.assertFalse(N.is_zero())
        self.assertTrue(Matrix(spec, spec.matmul(N.data, C.data)).is_zero())


if __name__ == '__main__':
    unittest.main()
