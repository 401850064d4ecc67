from fractions import Fraction
from unittest import TestCase

from jinja2 import UndefinedError

from sged.api.util import derive_int_seed, format_number, get_template, make_rng, sha1_hash
from sged.progress import ProgressLine, progress_spinner


class TestApiUtil(TestCase):
    def test_sha1_hash(self):
        assert sha1_hash("hello") == "aaf4c61ddcc5e8a2dabede0f3b482cd9aea9434d"

    def test_get_template_is_cached(self):
        assert get_template("{{ a }}") is get_template("{{ a }}")
        assert get_template("remove the {{ a }} object").render(a="red") == "remove the red object"

    def test_get_template_strict(self):
        with self.assertRaises(UndefinedError):
            get_template("{{ missing }}").render()

    def test_format_number(self):
        assert format_number(Fraction(0)) == "0.0"
        assert format_number(Fraction(1, 4)) == "0.25"
        assert format_number(Fraction(1, 3)) == "0.3333"
        assert format_number(Fraction(1, 16)) == "0.0625"
        assert format_number(2) == "2.0"


class TestSeeds(TestCase):
    def test_same_keys_same_draws(self):
        assert make_rng(3, "scene", 1).random() == make_rng(3, "scene", 1).random()
        assert derive_int_seed(3, "train") == derive_int_seed(3, "train")

    def test_keys_are_independent(self):
        assert make_rng(3, "scene", 1).random() != make_rng(3, "scene", 2).random()
        assert make_rng(3, "train").random() != make_rng(3, "test").random()
        assert make_rng(3, "train").random() != make_rng(4, "train").random()


class TestProgress(TestCase):
    def test_progress_line(self):
        line = ProgressLine(2, prefix_message="finetuning")
        assert line.render() == "0% (0/2) - finetuning"

        line.advance(status="reward 0.5000")
        assert line.render() == "50% (1/2) - finetuning - reward 0.5000"

        line.advance()
        assert line.render().startswith("100% (2/2) - finetuning - reward 0.5000")

    def test_single_item_has_no_percentage(self):
        assert ProgressLine(1, prefix_message="ranking").render() == "ranking"

    def test_noop_outside_cli(self):
        with progress_spinner(3) as progress:
            progress()
            progress(status="ignored")
