"""HTTP/WebSocket surface over one game runtime.

Startup replays the episode log so counters and the leaderboard survive a
crash; shutdown flushes every in-flight session as an incomplete episode.
"""

from __future__ import annotations

import os
import threading
from contextlib import asynccontextmanager

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse

from ..dm import BadgeRule, DungeonMaster, StarThresholds
from ..engine import GameRuntime
from ..episodelog import EpisodeLog, next_episode_number, read_episodes, rebuild_state
from ..orchestrator import RedeployError, VariantSpec, load_variants, redeploy
from ..pool import ModelPool, ModelVariant, VariantFactors
from ..safety import Blocklist
from ..scoring import CandidateBank, DecodingControl, TfIdfModel
from ..worldgen import WorldSpec, build_world
from .config import ServiceConfig, packaged_blocklist_path
from .protocol import GameplayHandler, leaderboard_rows

FACTOR_LEVELS = {
    "train_data": ("seed", "seed+wild"),
    "size_tag": None,  # levels observed from the pool
    "negative_context": (False, True),
    "decoding_control": (False, True),
}


def build_runtime(config: ServiceConfig) -> tuple[GameRuntime, EpisodeLog]:
    """Load world, blocklist, and checkpoints; replay any existing log."""
    blocklist = Blocklist.load(config.blocklist_path or packaged_blocklist_path())
    catalog = build_world(
        WorldSpec(
            num_characters=config.num_characters,
            num_locations=config.num_locations,
            seed=config.world_seed,
        )
    ).vet(blocklist)
    bank = CandidateBank.build(catalog.all_texts(), vet=blocklist.allows)

    if config.variants:
        specs = [VariantSpec(vid, path) for vid, path in sorted(config.variants.items())]
        variants = load_variants(specs)
    else:
        baseline = TfIdfModel.fit(bank.texts)
        variants = [ModelVariant("baseline-tfidf", model=baseline)]
    pool = ModelPool(variants)

    thresholds = StarThresholds(
        four_star_rank=config.four_star_rank,
        three_star_rank=config.three_star_rank,
        two_star_rank=config.two_star_rank,
        proportional_mode=config.proportional_stars,
    )
    badge_rule = BadgeRule(
        one_badge_points=config.first_badge_at, two_badge_points=config.second_badge_at
    )
    dm = DungeonMaster(variants[0].model, bank, thresholds=thresholds, badge_rule=badge_rule)

    recovered = []
    if os.path.exists(config.episode_log):
        recovered = read_episodes(config.episode_log)
    log = EpisodeLog(config.episode_log)
    runtime = GameRuntime(
        catalog,
        pool,
        dm,
        bank,
        blocklist,
        round_id=config.round_id,
        seed=config.seed,
        on_episode=log.append,
        max_history=config.max_history,
        first_episode_number=next_episode_number(recovered),
    )
    if recovered:
        rebuild_state(recovered, pool=pool, leaderboard=runtime.leaderboard, strict=False)
    return runtime, log


def factor_effects(pool: ModelPool) -> dict:
    """Every measurable one-factor contrast; silent about unmeasurable ones."""
    observed: dict[str, set] = {}
    for row in pool.metrics()["variants"]:
        for name, level in row["factors"].items():
            observed.setdefault(name, set()).add(level)
    effects = {}
    for name, levels in sorted(observed.items()):
        fixed = FACTOR_LEVELS.get(name)
        pairs = sorted(levels, key=repr) if fixed is None else [l for l in fixed if l in levels]
        for i, a in enumerate(pairs):
            for b in pairs[i + 1 :]:
                try:
                    est = pool.factor_effect(name, a, b)
                except ValueError:
                    continue
                effects[f"{name}: {a!r} -> {b!r}"] = {
                    "delta": est.rate,
                    "stderr": est.stderr,
                    "n": est.n,
                }
    return effects


def create_app(
    config: ServiceConfig | None = None,
    runtime: GameRuntime | None = None,
    episode_log: EpisodeLog | None = None,
) -> FastAPI:
    """App factory; tests may inject a runtime directly instead of a config."""
    if runtime is None:
        runtime, episode_log = build_runtime(config or ServiceConfig())

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        # graceful shutdown: every in-flight episode lands as complete=false
        for handler in list(app.state.handlers):
            handler.disconnect()
        app.state.handlers.clear()
        if app.state.episode_log is not None:
            app.state.episode_log.close()

    app = FastAPI(title="fableloop", lifespan=lifespan)
    app.state.runtime = runtime
    app.state.episode_log = episode_log
    app.state.handlers = set()
    app.state.redeploy_lock = threading.Lock()

    @app.websocket("/play")
    async def play(ws: WebSocket):
        await ws.accept()
        handler = GameplayHandler(runtime)
        app.state.handlers.add(handler)
        try:
            while True:
                raw = await ws.receive_text()
                for reply in handler.handle_raw(raw):
                    await ws.send_json(reply)
        except WebSocketDisconnect:
            pass
        finally:
            handler.disconnect()
            app.state.handlers.discard(handler)

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "episodes_served": runtime.pool.total_episodes_served(),
            "open_sessions": len(app.state.handlers),
        }

    @app.get("/leaderboard")
    def leaderboard(top_n: int = 10):
        return {"top_n": leaderboard_rows(runtime, top_n)}

    @app.get("/metrics")
    def metrics():
        payload = runtime.pool.metrics()
        payload["factor_effects"] = factor_effects(runtime.pool)
        payload["safety_rejections"] = runtime.safety_rejections
        return payload

    @app.post("/admin/redeploy")
    def admin_redeploy(body: dict):
        entries = body.get("variants")
        if not isinstance(entries, list) or not entries:
            return JSONResponse(
                {"error": "body needs a non-empty variants list"}, status_code=400
            )
        try:
            specs = [
                VariantSpec(
                    e["variant_id"],
                    e["checkpoint_path"],
                    factors=VariantFactors(**e.get("factors", {})),
                    control=DecodingControl(alpha=float(e.get("alpha", 0.0))),
                )
                for e in entries
            ]
        except (KeyError, TypeError, ValueError) as exc:
            return JSONResponse({"error": f"bad variant entry: {exc}"}, status_code=400)
        with app.state.redeploy_lock:
            try:
                variants = redeploy(runtime.pool, specs)
            except (RedeployError, ValueError) as exc:
                return JSONResponse({"error": str(exc)}, status_code=409)
            runtime.dm.model = variants[0].model
        return {"active": [v.variant_id for v in variants]}

    return app


def serve(config: ServiceConfig) -> None:
    """Block serving the app; raises on bad config or a busy port."""
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
