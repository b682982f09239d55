"""
hiercount - 层级转化计数的差分隐私估计

对按属性层级聚合的转化计数逐层加离散拉普拉斯噪声，做一致性后处理，
并按预测误差在各层之间分配隐私预算。
"""

__version__ = "1.0.0"
__author__ = "hiercount Team"
