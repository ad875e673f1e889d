import pytest

from veritensor.model import ModelConfig, MoeConfig, toy_config
from veritensor.prove import prove_inference
from veritensor.store import commit_model, make_toy_model

TOY_TOKENS = [5, 1, 13, 2, 200, 7, 77, 3]
MINI_TOKENS = [1, 2, 3]


def mini_config() -> ModelConfig:
    return ModelConfig(
        dim=16, n_layers=1, n_heads=2, head_dim=4, rope_dim=4,
        q_lora_rank=8, kv_lora_rank=4, vocab_size=32, max_seq=8,
        moe=MoeConfig(n_experts=4, n_shared=1, n_groups=2, per_group_top=1,
                      groups_selected=1, experts_selected=2, inter_dim=8),
    )


@pytest.fixture(scope="session")
def mini_model(tmp_path_factory):
    d = tmp_path_factory.mktemp("mini_model")
    cfg = mini_config()
    make_toy_model(d, cfg, seed=3)
    commitment, tree = commit_model(d)
    return {"dir": d, "cfg": cfg, "commitment": commitment, "tree": tree}


@pytest.fixture(scope="session")
def mini_session(mini_model):
    res = prove_inference(mini_model["dir"], MINI_TOKENS,
                          mini_model["commitment"], mini_model["tree"])
    return {**mini_model, "tokens": MINI_TOKENS, "result": res}


@pytest.fixture(scope="session")
def toy_model(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy_model")
    cfg = toy_config()
    make_toy_model(d, cfg, seed=7)
    commitment, tree = commit_model(d)
    return {"dir": d, "cfg": cfg, "commitment": commitment, "tree": tree}


@pytest.fixture(scope="session")
def toy_session(toy_model):
    res = prove_inference(toy_model["dir"], TOY_TOKENS,
                          toy_model["commitment"], toy_model["tree"])
    return {**toy_model, "tokens": TOY_TOKENS, "result": res}
