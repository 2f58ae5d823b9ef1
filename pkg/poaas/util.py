# poaas/util.py
# ======================================================================
#  通用工具（异常 / 摘要 / 端点探测 / CLI 入口）
#  - 异常层级：EmptyInput / ConfigError / AgentTimeout / AgentProtocolError / ServiceUnavailable
#  - 友好退出：run_cli 把已知异常映射为稳定的退出码（2=用法/校验，1=运行时）
#  - 无副作用：模块 import 不产生日志
# ======================================================================

from __future__ import annotations
import hashlib, json, socket, sys, unicodedata
from typing import Any, Callable
from urllib.parse import urlparse

from poaas.logging_utils import error, debug

EXIT_RUNTIME = 1
EXIT_USAGE = 2


# --------------------------- 异常 ---------------------------
class PoaasError(RuntimeError):
    """所有可预期错误的基类"""

class EmptyInput(PoaasError, ValueError):
    """空串 / 纯空白输入：在边界处拒绝，不参与打分"""

class ConfigError(PoaasError, ValueError):
    """配置非法、未知键、未知模板、数据文件缺失"""

class AgentError(PoaasError):
    """specialist 调用失败；流水线内部一律降级为丢弃候选"""
    code = "AGENT_ERROR"

class AgentTimeout(AgentError):
    code = "AGENT_TIMEOUT"

class AgentProtocolError(AgentError):
    code = "AGENT_PROTOCOL"

class ServiceUnavailable(PoaasError):
    """基础设施不可达（端点探测失败 / 端口占用）"""


# --------------------------- 文本 ---------------------------
def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text or "")

def require_text(text: str | None, what: str = "prompt") -> str:
    """NFC 规范化并拒绝空输入"""
    s = nfc(text or "")
    if not s.strip():
        raise EmptyInput(f"{what} is empty")
    return s


# --------------------------- 摘要 ---------------------------
def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()

def canonical_json(obj: Any) -> str:
    """排序键 + 紧凑分隔符，用于稳定摘要"""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# --------------------------- 端点探测 ---------------------------
def tcp_ready(host: str, port: int, timeout: float = 0.8) -> bool:
    """简单 TCP 探测（区分“端口未开”与“协议错误”）"""
    try:
        with socket.create_connection((host, port), timeout=timeout):
            return True
    except OSError:
        return False

def endpoint_ready(url: str, timeout: float = 0.8) -> bool:
    try:
        u = urlparse(url)
        host = u.hostname or "localhost"
        port = u.port or (443 if u.scheme == "https" else 80)
    except ValueError:
        return False
    ok = tcp_ready(host, port, timeout)
    debug(f"[util] reach {host}:{port} -> {'up' if ok else 'down'}")
    return ok


# --------------------------- CLI 入口包装 ---------------------------
def run_cli(main_fn: Callable[[], Any]) -> None:
    """
    包装 CLI 入口：
      - ConfigError / EmptyInput -> 一段友好提示，退出码 2
      - ServiceUnavailable / 其他 PoaasError -> 退出码 1
      - 抑制长 Traceback
    """
    try:
        main_fn()
    except (ConfigError, EmptyInput) as e:
        error(str(e))
        sys.exit(EXIT_USAGE)
    except PoaasError as e:
        error(str(e))
        sys.exit(EXIT_RUNTIME)
