# poaas/config.py
# ======================================================================
#  流水线配置（pydantic，不可变）
#  - 默认超参：τ_typo=0.30 / τ_comp=0.70 / τ_flu=0.80 / τ_skip=0.25
#  - 优先级：默认值 < 环境变量（.env 亦可） < YAML 配置文件 < CLI 参数
#  - 未知键 / 越界阈值 -> ConfigError（CLI 退出码 2）
#  - config_hash = sha256(规范化 JSON（不含密钥） + 全部数据文件摘要)
#  - with_overrides 只允许改阈值 / 上限；端点与 mock 开关在启动时固定
# ======================================================================

from __future__ import annotations
import math, os
from pathlib import Path
from typing import Any, Callable, Dict, Literal, Mapping, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from poaas.lexicon import Lexicon, load_lexicon
from poaas.util import ConfigError, canonical_json, sha256_hex

load_dotenv()

# --------------------------- 环境变量 ---------------------------
ENV_MOCK          = "POAAS_MOCK"
ENV_BIND          = "POAAS_BIND"
ENV_DATA_DIR      = "POAAS_DATA_DIR"
ENV_ARTIFACT_DIR  = "POAAS_ARTIFACT_DIR"
ENV_CONFIG        = "POAAS_CONFIG"
ENV_TIMEOUT       = "POAAS_SPECIALIST_TIMEOUT"
ENV_MODEL         = "POAAS_SPECIALIST_MODEL"
ENV_API_KEY       = "POAAS_SPECIALIST_API_KEY"
ENV_WIRE          = "POAAS_SPECIALIST_WIRE"
ENV_ENDPOINT_URLS = {
    "cleaner": "POAAS_CLEANER_URL",
    "paraphraser": "POAAS_PARAPHRASER_URL",
    "fact_adder": "POAAS_FACT_URL",
}

DEFAULT_BIND = "127.0.0.1:8080"
OVERRIDABLE = ("thresholds", "drift_policy", "budget")

_STRICT = ConfigDict(extra="forbid", frozen=True)


def _env_flag(name: str) -> Optional[bool]:
    v = os.getenv(name)
    if v is None or v.strip() == "":
        return None
    return v.strip().lower() in ("1", "true", "yes", "on")


# --------------------------- token 计数器 ---------------------------
def _whitespace_tokens(text: str) -> int:
    return len(text.split())

def _char4_tokens(text: str) -> int:
    """粗略的子词估计：每 4 个字符约 1 个 token"""
    return math.ceil(len(text) / 4)

TOKEN_COUNTERS: Dict[str, Callable[[str], int]] = {
    "whitespace": _whitespace_tokens,
    "char4": _char4_tokens,
}


# --------------------------- 模型 ---------------------------
class RoutingThresholds(BaseModel):
    model_config = _STRICT

    tau_typo: float = Field(0.30, ge=0, le=1)
    tau_comp: float = Field(0.70, ge=0, le=1)
    tau_flu: float = Field(0.80, ge=0, le=1)
    tau_skip: float = Field(0.25, ge=0, le=1)
    tau_clar_fixed: float = Field(0.70, ge=0, le=1)
    typo_skip_max: float = Field(0.20, ge=0, le=1)


class DriftPolicy(BaseModel):
    model_config = _STRICT

    delta_clean_base: float = Field(0.15, ge=0, le=1)
    delta_clean_slope: float = Field(0.5, ge=0, le=1)
    delta_clean_max: float = Field(0.40, ge=0, le=1)
    delta_para: float = Field(0.08, ge=0, le=1)
    delta_para_relaxed: float = Field(0.13, ge=0, le=1)
    clar_relax_below: float = Field(0.70, ge=0, le=1)
    # 全局上限：无论 typo 多高，任何改写 D_final 都不得超过 δ_max
    delta_max: float = Field(0.18, ge=0, le=1)
    rho_max: float = Field(2.4, gt=1)
    sanitized_length_factor: float = Field(2.0, gt=1)
    preservation_floor: float = Field(0.8, ge=0, le=1)
    penalty_weight: float = Field(0.2, ge=0, le=1)

    @model_validator(mode="after")
    def _ordered(self) -> "DriftPolicy":
        if not (self.delta_para <= self.delta_para_relaxed <= self.delta_max <= 1):
            raise ValueError("require delta_para <= delta_para_relaxed <= delta_max <= 1")
        if self.delta_clean_base > self.delta_clean_max:
            raise ValueError("require delta_clean_base <= delta_clean_max")
        return self

    def cleaner_cap(self, typo: float) -> float:
        """min(0.40, 0.15 + 0.5·typo)；叠加 δ_max 后有效上限为 min(该值, δ_max)"""
        return min(self.delta_clean_max, self.delta_clean_base + self.delta_clean_slope * typo)

    def paraphraser_cap(self, clar: float) -> float:
        return self.delta_para_relaxed if clar < self.clar_relax_below else self.delta_para


class TokenBudget(BaseModel):
    model_config = _STRICT

    fact_token_cap: int = Field(120, ge=0)
    fact_bullet_cap: int = Field(3, ge=0)
    counter: str = "whitespace"

    @model_validator(mode="after")
    def _known_counter(self) -> "TokenBudget":
        if self.counter not in TOKEN_COUNTERS:
            raise ValueError(f"unknown token counter {self.counter!r}; choose from {sorted(TOKEN_COUNTERS)}")
        return self

    def count(self, text: str) -> int:
        return TOKEN_COUNTERS[self.counter](text)


class EndpointConfig(BaseModel):
    """一个 specialist 的补全端点；api_key 不进入 config_hash"""
    model_config = _STRICT

    url: str
    wire: Literal["openai", "completions", "ollama"] = "openai"
    model: str = "poaas-specialist"
    api_key: str = Field("", repr=False)


class PipelineConfig(BaseModel):
    model_config = _STRICT

    thresholds: RoutingThresholds = RoutingThresholds()
    drift_policy: DriftPolicy = DriftPolicy()
    budget: TokenBudget = TokenBudget()
    agent_endpoints: Dict[Literal["cleaner", "paraphraser", "fact_adder"], EndpointConfig] = {}
    guard_endpoints: Dict[Literal["cleaner", "paraphraser"], str] = {}
    guard_repair: bool = False
    mock_mode: bool = False
    specialist_timeout_s: float = Field(10.0, gt=0)
    generation_cap: int = Field(512, ge=1)
    seed: int = 0
    max_workers: int = Field(3, ge=1, le=64)
    artifact_dir: str = "artifacts"
    data_dir: Optional[str] = None

    # ---- 派生 ----
    def lexicon(self) -> Lexicon:
        return load_lexicon(self.data_dir)

    def hash_payload(self) -> Dict[str, Any]:
        """参与摘要的内容：去掉密钥与运行期路径"""
        data = self.model_dump(mode="json", exclude={"artifact_dir", "data_dir"})
        for ep in data.get("agent_endpoints", {}).values():
            ep.pop("api_key", None)
        return data

    @property
    def config_hash(self) -> str:
        return sha256_hex(canonical_json(self.hash_payload()) + "\n" + self.lexicon().digest)

    @property
    def short_hash(self) -> str:
        return self.config_hash[:16]

    def with_overrides(self, partial: Mapping[str, Any] | None) -> "PipelineConfig":
        """请求级覆盖（仅阈值 / 上限）；其他键 -> ConfigError"""
        if not partial:
            return self
        if not isinstance(partial, Mapping):
            raise ConfigError("config_overrides must be an object")
        bad = sorted(set(partial) - set(OVERRIDABLE))
        if bad:
            raise ConfigError(f"config_overrides may only touch {', '.join(OVERRIDABLE)}; got {', '.join(bad)}")
        data = self.model_dump()
        for key, sub in partial.items():
            if not isinstance(sub, Mapping):
                raise ConfigError(f"config_overrides.{key} must be an object")
            data[key] = {**data[key], **sub}
        return validate_config(data)


# --------------------------- 加载 ---------------------------
def _format_errors(ex: ValidationError) -> str:
    parts = []
    for e in ex.errors():
        loc = ".".join(str(x) for x in e.get("loc", ())) or "<root>"
        parts.append(f"{loc}: {e.get('msg', 'invalid')}")
    return "invalid configuration: " + "; ".join(parts)

def validate_config(data: Mapping[str, Any]) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(dict(data))
    except ValidationError as ex:
        raise ConfigError(_format_errors(ex)) from None

def _deep_merge(base: Dict[str, Any], top: Mapping[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for k, v in top.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _deep_merge(dict(out[k]), v)
        else:
            out[k] = v
    return out

def env_overrides() -> Dict[str, Any]:
    """从环境变量收集配置（缺省则不出现）"""
    data: Dict[str, Any] = {}
    mock = _env_flag(ENV_MOCK)
    if mock is not None:
        data["mock_mode"] = mock
    if os.getenv(ENV_ARTIFACT_DIR):
        data["artifact_dir"] = os.getenv(ENV_ARTIFACT_DIR)
    if os.getenv(ENV_DATA_DIR):
        data["data_dir"] = os.getenv(ENV_DATA_DIR)
    if os.getenv(ENV_TIMEOUT):
        try:
            data["specialist_timeout_s"] = float(os.getenv(ENV_TIMEOUT, ""))
        except ValueError:
            raise ConfigError(f"{ENV_TIMEOUT} must be a number of seconds") from None

    endpoints = {}
    for kind, var in ENV_ENDPOINT_URLS.items():
        url = (os.getenv(var) or "").strip()
        if not url:
            continue
        ep: Dict[str, Any] = {"url": url.rstrip("/")}
        if os.getenv(ENV_MODEL):
            ep["model"] = os.getenv(ENV_MODEL)
        if os.getenv(ENV_WIRE):
            ep["wire"] = os.getenv(ENV_WIRE, "").lower()
        if os.getenv(ENV_API_KEY):
            ep["api_key"] = os.getenv(ENV_API_KEY)
        endpoints[kind] = ep
    if endpoints:
        data["agent_endpoints"] = endpoints
    return data

def read_config_file(path: str | os.PathLike) -> Dict[str, Any]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as ex:
        raise ConfigError(f"cannot read config file {p}: {ex.strerror or ex}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as ex:
        raise ConfigError(f"cannot parse config file {p}: {ex}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p}: top level must be a mapping")
    return data

def load_config(path: str | os.PathLike | None = None, **overrides: Any) -> PipelineConfig:
    """
    默认值 < 环境变量 < 配置文件（path 或 POAAS_CONFIG） < 关键字参数（值为 None 的忽略）
    """
    data = env_overrides()
    path = path or os.getenv(ENV_CONFIG) or None
    if path:
        data = _deep_merge(data, read_config_file(path))
    data = _deep_merge(data, {k: v for k, v in overrides.items() if v is not None})
    cfg = validate_config(data)
    cfg.lexicon()  # 数据文件缺失在启动时暴露
    return cfg


def bind_address(value: str | None = None) -> tuple[str, int]:
    """'host:port' -> (host, port)"""
    raw = (value or os.getenv(ENV_BIND) or DEFAULT_BIND).strip()
    host, sep, port = raw.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"bind address must look like host:port, got {raw!r}")
    n = int(port)
    if not 0 <= n <= 65535:
        raise ConfigError(f"bind port out of range: {n}")
    return host or "127.0.0.1", n
