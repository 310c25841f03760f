import jax

# 所有動力學與最佳化計算皆使用雙精度
jax.config.update("jax_enable_x64", True)
