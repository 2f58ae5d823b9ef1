import pytest

from poaas.agents import AgentKind, FunctionTransport, MockTransport
from poaas.config import ENV_ENDPOINT_URLS, PipelineConfig
from poaas.lexicon import load_lexicon

# 8 个噪声词（typo = 0.32 > τ_typo），篇幅足够长，Cleaner 修正后的漂移远低于上限
LONG_NOISY = (
    "Please expalin teh diffrence betwen a virus and a bacterial infection, and describ how the "
    "immune sytem reacts when it realy meets each one for the first time. I would also like to know "
    "which medicine doctors usually giv for each case, how long recovery normally takes for a healthy "
    "adult, and why antibiotics do not help against a common cold."
)

WELL_FORMED = "Explain how photosynthesis converts sunlight into chemical energy, and describe the role of chlorophyll in simple terms."


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for var in ("POAAS_MOCK", "POAAS_BIND", "POAAS_DATA_DIR", "POAAS_ARTIFACT_DIR", "POAAS_CONFIG",
                "POAAS_SPECIALIST_TIMEOUT", "POAAS_SPECIALIST_MODEL", "POAAS_SPECIALIST_API_KEY",
                "POAAS_SPECIALIST_WIRE", *ENV_ENDPOINT_URLS.values()):
        monkeypatch.delenv(var, raising=False)


@pytest.fixture(scope="session")
def lex():
    return load_lexicon()


@pytest.fixture
def cfg(tmp_path):
    return PipelineConfig(mock_mode=True, artifact_dir=str(tmp_path / "artifacts"))


@pytest.fixture
def mock_transports(cfg, lex):
    mock = MockTransport(lex=lex, budget=cfg.budget)
    return {k: mock for k in AgentKind}


def transports_with(base, **fns):
    """用函数替换部分 agent 的传输（故障注入 / 定制输出）"""
    out = dict(base)
    for name, fn in fns.items():
        out[AgentKind(name)] = FunctionTransport(fn)
    return out


def boom(_text):
    raise ConnectionError("specialist down")
