"""Optional adapter speaking the Jupyter kernel messaging protocol.

Requires the ``kernel`` extra (``pip install cellgraph[kernel]``). Live
kernels are inherently nondeterministic, so nothing in the test suite uses
this adapter; the engine treats it exactly like any other KernelAdapter.
"""

from __future__ import annotations

import json
from typing import Optional

from .errors import KernelUnavailableError
from .notebook import Output
from .session import ExecOutcome, VariableSchema

_DESCRIBE_SNIPPET = """
def _cellgraph_describe(value):
    import json
    kind, shape, columns, preview = "other", None, None, repr(value)[:512]
    try:
        import pandas as _pd
        if isinstance(value, _pd.DataFrame):
            kind = "table"
            shape = list(value.shape)
            columns = [[str(c), str(t)] for c, t in value.dtypes.items()]
    except Exception:
        pass
    if kind == "other":
        if isinstance(value, (list, tuple)):
            kind, shape = "sequence", [len(value)]
        elif isinstance(value, dict):
            kind, shape = "mapping", [len(value)]
        elif isinstance(value, (int, float, complex, str, bool)) or value is None:
            kind = "scalar"
    return json.dumps({"kind": kind, "shape": shape, "columns": columns, "preview": preview})
"""


class JupyterKernelAdapter:
    """Blocking adapter over jupyter_client; one kernel per instance."""

    def __init__(self, kernel_name: str = "python3", timeout: float = 60.0):
        try:
            from jupyter_client.manager import KernelManager
        except ImportError:
            raise KernelUnavailableError(
                "jupyter_client is not installed; install the 'kernel' extra"
            ) from None
        self.timeout = timeout
        self._manager = KernelManager(kernel_name=kernel_name)
        self._manager.start_kernel()
        self._client = self._manager.blocking_client()
        self._client.start_channels()
        self._client.wait_for_ready(timeout=timeout)

    def execute(self, source: str) -> ExecOutcome:
        import queue

        msg_id = self._client.execute(source, store_history=True)
        outputs: list[Output] = []
        error = None
        status = "ok"
        while True:
            try:
                msg = self._client.get_iopub_msg(timeout=self.timeout)
            except queue.Empty:
                raise KernelUnavailableError("kernel stopped responding") from None
            if msg.get("parent_header", {}).get("msg_id") != msg_id:
                continue
            mtype = msg["msg_type"]
            content = msg["content"]
            if mtype == "stream":
                outputs.append(Output(kind="stream_text", text=content.get("text", "")))
            elif mtype in ("display_data", "execute_result"):
                data = content.get("data", {})
                image = next((m for m in data if m.startswith("image/")), None)
                if image:
                    outputs.append(
                        Output(kind="display_image", image_data=data[image], image_mime=image)
                    )
                elif "text/plain" in data:
                    outputs.append(Output(kind="display_table_text", text=data["text/plain"]))
            elif mtype == "error":
                status = "error"
                error = (
                    content.get("ename", "Error"),
                    content.get("evalue", ""),
                    list(content.get("traceback", [])),
                )
            elif mtype == "status" and content.get("execution_state") == "idle":
                break
        return ExecOutcome(status=status, outputs=outputs, error=error)

    def introspect(self, name: str) -> Optional[VariableSchema]:
        # user_expressions evaluates without touching user history/state
        self.execute(_DESCRIBE_SNIPPET)
        reply = self._client.execute_interactive(
            "",
            user_expressions={"described": f"_cellgraph_describe({name})"},
            store_history=False,
            timeout=self.timeout,
        )
        expr = reply["content"].get("user_expressions", {}).get("described", {})
        if expr.get("status") != "ok":
            return None
        payload = json.loads(eval(expr["data"]["text/plain"]))  # strip repr quoting
        columns = payload.get("columns")
        return VariableSchema(
            name=name,
            kind=payload["kind"],
            shape=tuple(payload["shape"]) if payload.get("shape") else None,
            columns=[(c[0], c[1]) for c in columns] if columns is not None else None,
            preview=payload.get("preview"),
        )

    def interrupt(self) -> None:
        self._manager.interrupt_kernel()

    def reset(self) -> None:
        self._manager.restart_kernel(now=True)

    def shutdown(self) -> None:
        self._client.stop_channels()
        self._manager.shutdown_kernel(now=True)
