"""
测试模块
 
包含单元测试和集成测试。
""" 