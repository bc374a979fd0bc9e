"""Lexicon, entity, refinement and summarization tests.

The remote-refiner tests run a real HTTP server on a local port with
scripted responses, so the retry and parse paths are exercised over an
actual socket.
"""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from crossview.data import ClipRecord, DatasetManifest
from crossview.exceptions import (
    RefinementParseError,
    RefinerTransportError,
    ValidationError,
)
from crossview.text import (
    EntityProfile,
    FallbackRefiner,
    PromptTemplate,
    RemoteRefiner,
    TaggerLexicon,
    default_prompt_path,
    extract_entities,
    load_default_lexicon,
    load_prompt_template,
    parse_refined_captions,
    refine_manifest,
    render_refine_prompt,
    summarize_narrations,
    third_person,
    tokenize,
)


@pytest.fixture(scope="module")
def lexicon():
    return load_default_lexicon()


def clip(i, video="vid-a", text="caption", view="ego", scenario="cooking"):
    return ClipRecord(
        clip_id=f"c{i}", video_id=video, view=view, scenario=scenario,
        start=float(i), end=float(i) + 2.0, text=text,
    )


class TestLexicon:
    def test_loads_and_looks_up(self, lexicon):
        assert len(lexicon) > 500
        assert lexicon.lookup("toaster").pos == "noun"
        assert lexicon.lookup("TOAST").lemma == "toast"
        assert lexicon.lookup("chopping").lemma == "chop"
        assert lexicon.lookup("knives").lemma == "knife"
        assert lexicon.lookup("the").pos == "stop"
        assert lexicon.lookup("zzgh") is None

    def test_rejects_duplicates_and_bad_pos(self, tmp_path):
        p = tmp_path / "lex.tsv"
        p.write_text("cut\tcut\tverb\ncut\tcut\tnoun\n")
        with pytest.raises(ValidationError, match="duplicate"):
            TaggerLexicon.from_tsv(p)
        p.write_text("cut\tcut\tadverb\n")
        with pytest.raises(ValidationError, match="pos"):
            TaggerLexicon.from_tsv(p)
        p.write_text("cut cut verb\n")
        with pytest.raises(ValidationError, match="tab"):
            TaggerLexicon.from_tsv(p)

    def test_comments_and_blanks_skipped(self, tmp_path):
        p = tmp_path / "lex.tsv"
        p.write_text("# header\n\nbread\tbread\tnoun\n")
        assert len(TaggerLexicon.from_tsv(p)) == 1


class TestEntityExtraction:
    def test_hand_derived_example(self, lexicon):
        """'toast the bread in the toaster': noun/verb sets worked by hand
        against the shipped lexicon (the/in are stopwords; bread and
        toaster are nouns; toast is tagged verb)."""
        prof = extract_entities("toast the bread in the toaster", lexicon)
        assert prof.nouns == frozenset({"bread", "toaster"})
        assert prof.verbs == frozenset({"toast"})

    def test_inflections_map_to_lemmas(self, lexicon):
        prof = extract_entities("She was chopping two onions with knives", lexicon)
        assert prof.verbs == frozenset({"chop"})
        assert "onion" in prof.nouns and "knife" in prof.nouns

    def test_unknown_words_ignored(self, lexicon):
        prof = extract_entities("qwertasdf zxcvpoiu", lexicon)
        assert prof.is_empty()

    def test_profile_overlaps(self):
        a = EntityProfile(frozenset({"bread", "pan"}), frozenset({"toast"}))
        b = EntityProfile(frozenset({"bread"}), frozenset({"cut", "toast"}))
        assert a.noun_overlap(b) == 1
        assert a.verb_overlap(b) == 1
        assert EntityProfile().is_empty()

    def test_tokenize_keeps_apostrophes(self):
        assert tokenize("I'm Cutting, the bread!") == ["i'm", "cutting", "the", "bread"]


class TestThirdPerson:
    def test_rules(self):
        assert third_person("toast") == "toasts"
        assert third_person("mix") == "mixes"
        assert third_person("wash") == "washes"
        assert third_person("carry") == "carries"
        assert third_person("play") == "plays"
        assert third_person("go") == "goes"
        assert third_person("have") == "has"
        assert third_person("be") == "is"
        assert third_person("do") == "does"


class TestFallbackRefiner:
    def test_canonical_rewrite(self, lexicon):
        ref = FallbackRefiner(lexicon)
        got = ref.refine_line("so now I'm just gonna toast the bread okay")
        assert got == "The person toasts the bread."

    def test_more_rewrites(self, lexicon):
        ref = FallbackRefiner(lexicon)
        cases = {
            "#C C opens the drawer": "The person opens the drawer.",
            "chopping the onions on the board": "The person chops the onions on the board.",
            "and then we're going to mix the flour": "The person mixes the flour.",
            "i wash the plate": "The person washes the plate.",
            "okay so yeah": "",
            "Hello everyone today we will bake a cake": "The person bakes a cake.",
        }
        for raw, want in cases.items():
            assert ref.refine_line(raw) == want, raw

    def test_idempotent_on_refined_output(self, lexicon):
        ref = FallbackRefiner(lexicon)
        once = ref.refine_line("so now I'm just gonna toast the bread okay")
        assert ref.refine_line(once) == once

    def test_refine_video_is_per_line(self, lexicon):
        ref = FallbackRefiner(lexicon)
        records = [clip(0, text="i'm gonna cut the tomato"), clip(1, text="now i stir the soup")]
        assert ref.refine_video(records) == [
            "The person cuts the tomato.",
            "The person stirs the soup.",
        ]


class TestSummarize:
    def test_documented_cases(self):
        assert summarize_narrations([]) == ""
        assert summarize_narrations(["  "]) == ""
        assert summarize_narrations(["The person cuts bread."]) == "The person cuts bread."
        got = summarize_narrations(["Cuts bread.", "cuts bread.", "Stirs the soup."])
        assert got == "Cuts bread; Stirs the soup."

    def test_truncation_and_terminal_period(self):
        texts = [f"does step number {i} of the recipe" for i in range(12)]
        got = summarize_narrations(texts, max_words=10)
        assert len(got.rstrip(".").split()) == 10
        assert got.endswith(".")


class TestPromptTemplate:
    def test_shipped_template_loads(self):
        tpl = load_prompt_template(default_prompt_path())
        assert len(tpl.rules) == 10
        assert tpl.example_inputs and tpl.example_outputs

    def test_rule_count_enforced(self):
        with pytest.raises(ValidationError, match="10 rules"):
            PromptTemplate(instructions="x", rules=["only one"])

    def test_render_numbers_transcript(self):
        tpl = load_prompt_template(default_prompt_path())
        records = [clip(0, text="first line"), clip(1, text="second line")]
        prompt = render_refine_prompt(tpl, records)
        assert "1. [0.0-2.0] first line" in prompt
        assert "2. [1.0-3.0] second line" in prompt
        assert prompt.splitlines()[-1] == "Output:"
        assert render_refine_prompt(tpl, records) == prompt  # deterministic

    def test_parse_refined_captions(self):
        text = "2) The person stirs.\n1. The person cuts.\n"
        assert parse_refined_captions(text, 2) == [
            "The person cuts.",
            "The person stirs.",
        ]
        with pytest.raises(RefinementParseError) as err:
            parse_refined_captions("1. only one", 2)
        assert err.value.raw_response == "1. only one"
        with pytest.raises(RefinementParseError, match="repeated"):
            parse_refined_captions("1. a\n1. b", 1)


# ---------------------------------------------------------------------------
# remote refiner over a real local socket
# ---------------------------------------------------------------------------

class _ScriptedHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        self.server.seen.append((self.path, body))
        status, payload = self.server.script.pop(0)
        blob = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def log_message(self, *args):  # keep test output quiet
        pass


@pytest.fixture()
def scripted_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _ScriptedHandler)
    server.script = []
    server.seen = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        thread.join()


def make_remote(server, **kw):
    tpl = load_prompt_template(default_prompt_path())
    url = f"http://127.0.0.1:{server.server_address[1]}"
    kw.setdefault("backoff", 0.0)
    kw.setdefault("timeout", 5.0)
    return RemoteRefiner(url, tpl, **kw)


class TestRemoteRefiner:
    def test_success_round_trip(self, scripted_server):
        scripted_server.script = [(200, {"text": "1. The person cuts the bread."})]
        remote = make_remote(scripted_server)
        records = [clip(0, text="i'm gonna cut the bread")]
        assert remote.refine_video(records) == ["The person cuts the bread."]
        path, body = scripted_server.seen[0]
        assert path == "/v1/completions"
        assert body["max_tokens"] == 512
        assert "i'm gonna cut the bread" in body["prompt"]

    def test_retries_on_500_then_succeeds(self, scripted_server):
        scripted_server.script = [
            (500, {"error": "busy"}),
            (200, {"text": "1. The person stirs."}),
        ]
        remote = make_remote(scripted_server, retries=2)
        assert remote.refine_video([clip(0)]) == ["The person stirs."]
        assert len(scripted_server.seen) == 2

    def test_4xx_is_permanent(self, scripted_server):
        scripted_server.script = [(404, {"error": "nope"})]
        remote = make_remote(scripted_server, retries=3)
        with pytest.raises(RefinerTransportError, match="permanent"):
            remote.complete("prompt")
        assert len(scripted_server.seen) == 1

    def test_unreachable_endpoint(self):
        tpl = load_prompt_template(default_prompt_path())
        remote = RemoteRefiner(
            "http://127.0.0.1:9", tpl, timeout=0.2, retries=1, backoff=0.0
        )
        with pytest.raises(RefinerTransportError, match="attempts"):
            remote.complete("prompt")

    def test_missing_text_field(self, scripted_server):
        scripted_server.script = [(200, {"wrong": 1})]
        with pytest.raises(RefinementParseError, match="text"):
            make_remote(scripted_server).complete("prompt")


class TestRefineManifest:
    def manifest(self):
        return DatasetManifest("ego", [
            clip(0, video="va", text="i'm gonna cut the tomato"),
            clip(1, video="vb", text="chopping the onions"),
            clip(2, video="va", text="now i stir the soup"),
        ])

    def test_fallback_groups_by_video(self, lexicon):
        refined = refine_manifest(self.manifest(), FallbackRefiner(lexicon))
        texts = {r.clip_id: r.refined_text for r in refined.records}
        assert texts == {
            "c0": "The person cuts the tomato.",
            "c1": "The person chops the onions.",
            "c2": "The person stirs the soup.",
        }
        # source manifest untouched
        assert all(r.refined_text is None for r in self.manifest().records)

    def test_remote_one_request_per_video(self, scripted_server, lexicon):
        scripted_server.script = [
            (200, {"text": "1. A.\n2. B."}),
            (200, {"text": "1. C."}),
        ]
        remote = make_remote(scripted_server)
        refined = refine_manifest(self.manifest(), remote)
        texts = [r.refined_text for r in refined.records]
        assert texts == ["A.", "C.", "B."]
        assert len(scripted_server.seen) == 2

    def test_concurrent_refinement_keeps_order(self, lexicon):
        refined = refine_manifest(
            self.manifest(), FallbackRefiner(lexicon), max_concurrency=3
        )
        assert refined.records[0].refined_text == "The person cuts the tomato."
        assert refined.records[2].refined_text == "The person stirs the soup."

    def test_count_mismatch_rejected(self):
        class Bad:
            def refine_video(self, records):
                return ["only one"]

        with pytest.raises(ValidationError, match="captions for"):
            refine_manifest(self.manifest(), Bad())
