"""Record the case-study API exchanges as JSON fixtures for the UI tests.

Replays the income script against the engine's HTTP surface (in-process)
and freezes every response the browser client would see.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from fastapi.testclient import TestClient

HERE = Path(__file__).resolve().parent
FIXTURE_ENV = HERE.parent / "fixtures" / "case_study"
OUT_DIR = HERE / "tests" / "fixtures"

sys.path.insert(0, str(FIXTURE_ENV))
import build_db  # noqa: E402

from convbi.config import load_config  # noqa: E402
from convbi.engine import Engine  # noqa: E402
from convbi.server import create_app  # noqa: E402

QUESTION = "What is the income of the Company A in 2024?"
OPTION = "shouldincome_after"


def main() -> None:
    build_db.build()
    client = TestClient(create_app(Engine(load_config(FIXTURE_ENV / "config.json"))))
    OUT_DIR.mkdir(parents=True, exist_ok=True)

    def dump(name: str, payload) -> None:
        (OUT_DIR / f"{name}.json").write_text(
            json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    health = client.get("/v1/health").json()
    dump("health", health)

    session = client.post("/v1/sessions").json()
    session_id = session["session_id"]
    dump("session_create", {"session_id": "fixture-session"})

    clarify = client.post(f"/v1/sessions/{session_id}/messages",
                          json={"text": QUESTION}).json()
    dump("clarify_response", clarify)

    answer = client.post(f"/v1/sessions/{session_id}/messages",
                         json={"text": OPTION}).json()
    dump("answer_response", answer)

    transcript = client.get(f"/v1/sessions/{session_id}").json()
    transcript["session_id"] = "fixture-session"
    dump("transcript", transcript)

    dump("script", {"question": QUESTION, "option_id": OPTION})
    print(f"fixtures written to {OUT_DIR}")


if __name__ == "__main__":
    main()
