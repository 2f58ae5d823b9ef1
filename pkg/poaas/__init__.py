# poaas：最小编辑的提示优化层（打分 -> 路由 -> specialist -> 守卫 -> 漂移受控合并）
__version__ = "0.4.0"
