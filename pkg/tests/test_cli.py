import contextlib
import io
import os
import tempfile
import unittest
from unittest.mock import MagicMock, patch

import pandas as pd
import yaml

import main
from field import field_spec
from matrix import Matrix, from_rows, identity, read_matrix, well_conditioned_matrix, write_matrix, zeros
from scheduler import TaskFailure

WORKED_EXAMPLE = [
    [0, 2, 2, 0, 1, 0],
    [0, 2, 2, 1, 2, 2],
    [1, 0, 1, 0, 2, 1],
    [2, 0, 1, 0, 2, 2],
    [0, 1, 1, 2, 1, 1],
    [1, 2, 2, 2, 0, 0],
]


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.config = self.path("none.yaml")
        self.gf3 = field_spec(3)
        self.matrix = self.path("c.gfmat")
        write_matrix(self.matrix, from_rows(self.gf3, WORKED_EXAMPLE))

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def cli(self, *args):
        out = io.StringIO()
        with contextlib.redirect_stdout(out):
            code = main.main(list(args) + ["--config", self.config, "--log-level", "WARNING"])
        return code, out.getvalue()

    def ech(self, matrix=None, prefix="run", *extra):
        files = [self.path(f"{prefix}.{ext}") for ext in ("r", "t", "sel")]
        args = ["ech", "--in", matrix or self.matrix, "--out-r", files[0], "--out-selects", files[2]]
        if "--no-transform" not in extra:
            args += ["--out-t", files[1]]
        code, out = self.cli(*args, *extra)
        return code, out, files


class TestEchAndVerify(CliTestCase):
    def test_worked_example(self):
        code, out, (r_file, t_file, sel_file) = self.ech(None, "run", "--block", "3")
        self.assertEqual(code, main.EXIT_OK)
        self.assertIn("rank 5", out)
        self.assertEqual(read_matrix(r_file).shape, (5, 1))
        with open(sel_file) as f:
            selects = yaml.safe_load(f)
        self.assertEqual(selects['rank'], 5)
        self.assertEqual(selects['upsilon'], [0, 1, 2, 3, 5])
        self.assertEqual(selects['row_cuts'], [3, 3])
        with open(t_file) as f:
            self.assertEqual(f.readline().strip(), main.GFTRANS_HEADER)

        code, out = self.cli("verify", "--in", self.matrix, "--out-r", r_file,
                             "--out-t", t_file, "--out-selects", sel_file)
        self.assertEqual(code, main.EXIT_OK)
        self.assertIn("ok", out)

    def test_rank_command(self):
        code, out = self.cli("rank", "--in", self.matrix, "--block", "2")
        self.assertEqual(code, main.EXIT_OK)
        self.assertEqual(out.strip().splitlines()[-1], "5")

    def test_zero_matrix(self):
        path = self.path("zero.gfmat")
        write_matrix(path, zeros(self.gf3, 4, 3))
        code, out, _ = self.ech(path, "zero", "--block", "2")
        self.assertEqual(code, main.EXIT_OK)
        self.assertIn("rank 0", out)

    def test_full_rank_round_trip(self):
        path = self.path("full.gfmat")
        write_matrix(path, well_conditioned_matrix(field_spec(7), 6, seed=3))
        code, _, (r_file, t_file, sel_file) = self.ech(path, "full", "--block", "4")
        self.assertEqual(code, main.EXIT_OK)
        self.assertEqual(read_matrix(r_file).shape, (6, 0))
        code, _ = self.cli("verify", "--in", path, "--out-r", r_file, "--out-t", t_file,
                           "--out-selects", sel_file)
        self.assertEqual(code, main.EXIT_OK)

    def test_thread_count_does_not_change_files(self):
        _, _, one = self.ech(None, "one", "--block", "2", "--threads", "1")
        _, _, many = self.ech(None, "many", "--block", "2", "--threads", "4")
        for a, b in zip(one, many):
            with open(a) as fa, open(b) as fb:
                self.assertEqual(fa.read(), fb.read(), a)

    def test_without_transform(self):
        code, _, (r_file, t_file, sel_file) = self.ech(None, "plain", "--block", "3", "--no-transform")
        self.assertEqual(code, main.EXIT_OK)
        self.assertFalse(os.path.exists(t_file))
        code, _ = self.cli("verify", "--in", self.matrix, "--out-r", r_file, "--out-selects", sel_file)
        self.assertEqual(code, main.EXIT_OK)

    def test_tampered_r_fails_verification(self):
        _, _, (r_file, t_file, sel_file) = self.ech(None, "run", "--block", "3")
        with open(r_file) as f:
            lines = f.read().splitlines()
        lines[3] = str((int(lines[3]) + 1) % 3)
        with open(r_file, "w") as f:
            f.write("\n".join(lines) + "\n")
        code, out = self.cli("verify", "--in", self.matrix, "--out-r", r_file,
                             "--out-t", t_file, "--out-selects", sel_file)
        self.assertEqual(code, main.EXIT_VERIFY_FAILED)
        self.assertIn("FAILED", out)
        self.assertIn("entry", out)

    def tamper_selected_rows(self, sel_file, keep_flat_list_consistent=True):
        with open(sel_file) as f:
            selects = yaml.safe_load(f)
        self.assertEqual(selects['varrho_blocks'][1], [0, 2])
        selects['varrho_blocks'][1] = [0, 1]
        if keep_flat_list_consistent:
            selects['varrho'] = [0, 1, 2, 3, 4]
        with open(sel_file, "w") as f:
            yaml.safe_dump(selects, f, sort_keys=False)

    def test_tampered_selected_rows_fail_verification(self):
        _, _, (r_file, t_file, sel_file) = self.ech(None, "run", "--block", "3")
        self.tamper_selected_rows(sel_file)
        code, out = self.cli("verify", "--in", self.matrix, "--out-r", r_file,
                             "--out-t", t_file, "--out-selects", sel_file)
        self.assertEqual(code, main.EXIT_VERIFY_FAILED)
        self.assertIn("FAILED", out)
        code, out = self.cli("verify", "--in", self.matrix, "--out-r", r_file, "--out-selects", sel_file)
        self.assertEqual(code, main.EXIT_VERIFY_FAILED)
        self.assertIn("selected rows", out)

    def test_tampered_selected_rows_without_transform_run(self):
        _, _, (r_file, _, sel_file) = self.ech(None, "plain", "--block", "3", "--no-transform")
        self.tamper_selected_rows(sel_file)
        code, out = self.cli("verify", "--in", self.matrix, "--out-r", r_file, "--out-selects", sel_file)
        self.assertEqual(code, main.EXIT_VERIFY_FAILED)
        self.assertIn("selected rows", out)

    def test_inconsistent_selects_document(self):
        _, _, (r_file, _, sel_file) = self.ech(None, "run", "--block", "3")
        self.tamper_selected_rows(sel_file, keep_flat_list_consistent=False)
        code, out = self.cli("verify", "--in", self.matrix, "--out-r", r_file, "--out-selects", sel_file)
        self.assertEqual(code, main.EXIT_BAD_INPUT)
        self.assertNotIn("ok", out)

    def test_field_header_mismatch(self):
        _, _, (r_file, t_file, sel_file) = self.ech(None, "run", "--block", "3")
        with open(r_file) as f:
            lines = f.read().splitlines()
        lines[1] = "field p=5 k=1"
        with open(r_file, "w") as f:
            f.write("\n".join(lines) + "\n")
        code, _ = self.cli("verify", "--in", self.matrix, "--out-r", r_file,
                           "--out-t", t_file, "--out-selects", sel_file)
        self.assertEqual(code, main.EXIT_BAD_INPUT)


class TestErrors(CliTestCase):
    def test_malformed_input(self):
        path = self.path("bad.gfmat")
        with open(path, "w") as f:
            f.write("GFMAT v1\nfield p=3 k=1\nrows=2 cols=2\n1 2\n")
        code, _ = self.cli("ech", "--in", path)
        self.assertEqual(code, main.EXIT_BAD_INPUT)

    def test_missing_arguments(self):
        self.assertEqual(self.cli("ech")[0], main.EXIT_BAD_INPUT)
        self.assertEqual(self.cli("verify", "--in", self.matrix)[0], main.EXIT_BAD_INPUT)
        self.assertEqual(self.cli("ech", "--in", self.path("absent.gfmat"))[0], main.EXIT_BAD_INPUT)

    def test_invalid_block(self):
        self.assertEqual(self.cli("ech", "--in", self.matrix, "--block", "0")[0], main.EXIT_BAD_INPUT)

    def test_ech_takes_one_thread_count(self):
        code, _, (r_file, _, _) = self.ech(None, "multi", "--threads", "1,4")
        self.assertEqual(code, main.EXIT_BAD_INPUT)
        self.assertFalse(os.path.exists(r_file))

    def test_transform_file_needs_transform(self):
        t_file = self.path("plain.t")
        code, _ = self.cli("ech", "--in", self.matrix, "--out-t", t_file, "--no-transform")
        self.assertEqual(code, main.EXIT_BAD_INPUT)
        self.assertFalse(os.path.exists(t_file))

    def test_task_failure_exit_code(self):
        node = MagicMock(kind="ClearDown", coords=(1, 1))
        failure = TaskFailure(node, ArithmeticError("bad block"))
        with patch("main.echelonize", side_effect=failure):
            code, _ = self.cli("ech", "--in", self.matrix)
        self.assertEqual(code, main.EXIT_TASK_FAILED)


class TestOtherCommands(CliTestCase):
    def test_invert(self):
        spec = field_spec(5)
        C = well_conditioned_matrix(spec, 5, seed=1)
        src, dst = self.path("inv_in.gfmat"), self.path("inv_out.gfmat")
        write_matrix(src, C)
        code, _ = self.cli("invert", "--in", src, "--out-r", dst, "--block", "2")
        self.assertEqual(code, main.EXIT_OK)
        inv = read_matrix(dst)
        self.assertEqual(Matrix(spec, spec.matmul(C.data, inv.data)), identity(spec, 5))

    def test_invert_singular(self):
        code, out = self.cli("invert", "--in", self.matrix, "--block", "3")
        self.assertEqual(code, main.EXIT_VERIFY_FAILED)
        self.assertIn("singular", out)

    def test_bench(self):
        code, out = self.cli("bench", "--size", "16", "--field", "9", "--block", "4", "--threads", "1,2")
        self.assertEqual(code, main.EXIT_OK)
        self.assertIn("speedup", out)
        self.assertEqual(len(out.strip().splitlines()), 3)

    def test_bench_empty(self):
        code, out = self.cli("bench", "--size", "0", "--threads", "1")
        self.assertEqual(code, main.EXIT_OK)

    def test_analyze(self):
        code, out = self.cli("analyze", "--a", "8", "--alpha", "100", "--mode", "well_conditioned")
        self.assertEqual(code, main.EXIT_OK)
        self.assertIn(str(22 * 100 ** 3), out)


class TestConfig(CliTestCase):
    def test_missing_config_is_empty(self):
        self.assertEqual(main.load_config(self.path("nothing.yaml")), {})

    def test_yaml_values_and_flag_override(self):
        trace = self.path("trace.csv")
        with open(self.config, "w") as f:
            yaml.safe_dump({'run': {'block': 3}, 'monitor': {'trace': trace}}, f)
        _, _, (_, _, sel_file) = self.ech(None, "cfg")
        with open(sel_file) as f:
            self.assertEqual(yaml.safe_load(f)['row_cuts'], [3, 3])
        self.assertFalse(pd.read_csv(trace).empty)

        _, _, (_, _, sel_file) = self.ech(None, "flag", "--block", "2")
        with open(sel_file) as f:
            self.assertEqual(yaml.safe_load(f)['row_cuts'], [2, 2, 2])

    def test_run_config_validation(self):
        args = main.build_parser().parse_args(["bench", "--threads", "1,0"])
        with self.assertRaises(ValueError):
            main.build_run_config(args, {})
        args = main.build_parser().parse_args(["bench"])
        cfg = main.build_run_config(args, {'bench': {'threads': [1, 4], 'field': '3^2'}})
        self.assertEqual(cfg.threads, (1, 4))
        self.assertEqual(cfg.field_name, '3^2')
        self.assertTrue(cfg.with_transform)


if __name__ == '__main__':
    unittest.main()
